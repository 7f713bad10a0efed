//! Small helpers over `[T; 3]`.

use std::ops::{Add, Mul, Sub};

#[inline]
pub fn add<T: Add<Output = T> + Copy>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub<T: Sub<Output = T> + Copy>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale<T: Mul<Output = T> + Copy>(a: [T; 3], s: T) -> [T; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot<T: Mul<Output = T> + Add<Output = T> + Copy>(a: [T; 3], b: [T; 3]) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross<T: Mul<Output = T> + Sub<Output = T> + Copy>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn normalize(a: [f64; 3]) -> [f64; 3] {
    scale(a, 1.0 / norm(a))
}

#[inline]
pub fn to_f64<F: crate::Real>(a: [F; 3]) -> [f64; 3] {
    [a[0].as_f64(), a[1].as_f64(), a[2].as_f64()]
}

#[inline]
pub fn from_f64<F: crate::Real>(a: [f64; 3]) -> [F; 3] {
    [F::lit(a[0]), F::lit(a[1]), F::lit(a[2])]
}
