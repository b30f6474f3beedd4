use crate::error::Result;
use crate::tensor::{Element, Tensor};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal CDF via `erf`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

/// Exact (erf-based) GELU, `x * Phi(x)`.
pub fn gelu_scalar(x: f64) -> f64 {
    x * normal_cdf(x)
}

pub fn gelu_grad_scalar(x: f64) -> f64 {
    normal_cdf(x) + x * FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn gelu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| T::lit(gelu_scalar(v.to_f64_lossy())))
}

pub fn add<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.zip_map(b, "add", |x, y| x + y)
}

pub fn sub<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.zip_map(b, "sub", |x, y| x - y)
}

pub fn mul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.zip_map(b, "mul", |x, y| x * y)
}

pub fn add_scalar<T: Element>(a: &Tensor<T>, s: T) -> Tensor<T> {
    a.map(|x| x + s)
}

pub fn mul_scalar<T: Element>(a: &Tensor<T>, s: T) -> Tensor<T> {
    a.map(|x| x * s)
}
