use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Running mean `avg ← (avg·n + new) / (n + 1)`, where `n` counts the
/// models already averaged.
pub fn swa_update<T: Real>(avg: &mut [Tensor<T>], new: &[Tensor<T>], n_models: usize) -> Result<()> {
    if avg.len() != new.len() || avg.iter().zip(new).any(|(a, b)| a.shape() != b.shape()) {
        return Err(Error::validation("SWA average and new parameters differ in shape"));
    }
    let n = T::of(n_models as f64);
    let n1 = T::of(n_models as f64 + 1.0);
    for (a, b) in avg.iter_mut().zip(new) {
        for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
            *x = (*x * n + y) / n1;
        }
    }
    Ok(())
}
