use super::proxy::{EditProxy, ProxyShape};
use crate::field::{DynamicField, FieldError, RadianceField, RadianceSample};
use crate::vec3;
use crate::Real;

/// A frozen field seen through an edit proxy at the edit time.
///
/// Away from the edit time, and outside the proxy region at it, queries are
/// forwarded to the base field untouched.
#[derive(Clone, Debug)]
pub struct TeacherModel<B> {
    base: B,
    proxy: EditProxy,
}

impl<B> TeacherModel<B> {
    pub fn new(base: B, proxy: EditProxy) -> Self {
        Self { base, proxy }
    }

    pub fn base(&self) -> &B {
        &self.base
    }

    pub fn proxy(&self) -> &EditProxy {
        &self.proxy
    }
}

impl TeacherModel<DynamicField<f32>> {
    /// A student initialized with the base weights.
    pub fn fresh_student(&self) -> DynamicField<f32> {
        self.base.clone()
    }
}

impl<B> TeacherModel<B> {
    fn at_edit_time<F: Real>(&self, t: F) -> bool {
        t == F::lit(self.proxy.t_edit)
    }

    fn recolor<F: Real>(&self, x: [F; 3], mut s: RadianceSample<F>) -> RadianceSample<F> {
        if let ProxyShape::Seal(seal) = &self.proxy.shape {
            if let Some(hsl) = seal.map_hsl(vec3::to_f64(x), vec3::to_f64(s.color)) {
                s.color = vec3::from_f64(super::color::hsl_to_rgb(hsl));
            }
        }
        s
    }

    fn source_point<F: Real>(&self, x: [F; 3], d: [F; 3]) -> [F; 3] {
        match &self.proxy.shape {
            ProxyShape::Brush(b) => {
                let m = b.map(vec3::to_f64(x), vec3::to_f64(d));
                if m.inside {
                    vec3::from_f64(m.point)
                } else {
                    x
                }
            }
            ProxyShape::Seal(_) => x,
        }
    }
}

impl<F: Real, B: RadianceField<F>> RadianceField<F> for TeacherModel<B> {
    fn query(&self, x: [F; 3], d: [F; 3], t: F) -> Result<RadianceSample<F>, FieldError> {
        if !self.at_edit_time(t) {
            return self.base.query(x, d, t);
        }
        let s = self.base.query(self.source_point(x, d), d, t)?;
        Ok(self.recolor(x, s))
    }

    fn query_batch(
        &self,
        points: &[[F; 3]],
        dirs: &[[F; 3]],
        t: F,
    ) -> Result<Vec<RadianceSample<F>>, FieldError> {
        if !self.at_edit_time(t) {
            return self.base.query_batch(points, dirs, t);
        }
        let mapped: Vec<[F; 3]> = points
            .iter()
            .zip(dirs)
            .map(|(&x, &d)| self.source_point(x, d))
            .collect();
        let out = self.base.query_batch(&mapped, dirs, t)?;
        Ok(points
            .iter()
            .zip(out)
            .map(|(&x, s)| self.recolor(x, s))
            .collect())
    }
}
