use super::FlError;
use crate::nn::ParamVector;

/// Sample-count weighted mean, weights `n_i / Σ n_j` over the given models.
///
/// Models are summed in the order given; callers that need schedule-independent
/// results pass them sorted by client id.
pub fn aggregate(models: &[&ParamVector], sample_counts: &[u64]) -> Result<ParamVector, FlError> {
    if models.is_empty() {
        return Err(FlError::Empty("aggregate"));
    }
    if models.len() != sample_counts.len() {
        return Err(FlError::LengthMismatch(models.len(), sample_counts.len()));
    }
    if sample_counts.contains(&0) {
        return Err(FlError::Invalid("zero sample count".into()));
    }
    let len = models[0].len();
    if let Some(m) = models.iter().find(|m| m.len() != len) {
        return Err(FlError::LengthMismatch(len, m.len()));
    }
    let total: u64 = sample_counts.iter().sum();
    let mut out = vec![0.0; len];
    for (m, &n) in models.iter().zip(sample_counts) {
        let w = n as f64 / total as f64;
        for (o, v) in out.iter_mut().zip(m.as_slice()) {
            *o += w * v;
        }
    }
    Ok(ParamVector::new(out)?)
}
