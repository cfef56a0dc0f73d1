use super::{FeatureMatrix, UtteranceRecord};
use crate::{Error, Result};

/// Phone posteriors derived from frame labels: row `t` is
/// `(1 - smoothing) * onehot(label_t) + smoothing / n_phones`.
///
/// Stands in for the output of a phone recogniser.
pub fn oracle_posteriors(
    u: &UtteranceRecord,
    n_phones: usize,
    smoothing: f64,
) -> Result<FeatureMatrix> {
    if !(0.0..1.0).contains(&smoothing) {
        return Err(Error::invalid("smoothing", format!("{smoothing} not in [0, 1)")));
    }
    if n_phones == 0 {
        return Err(Error::invalid("n_phones", "empty phone set"));
    }
    let labels = u.phone_labels.as_ref().ok_or_else(|| {
        Error::invalid("phone_labels", format!("{} has no phone labels", u.utterance_id))
    })?;
    let floor = smoothing / n_phones as f64;
    let mut data = vec![floor; labels.len() * n_phones];
    for (t, &l) in labels.iter().enumerate() {
        let l = l as usize;
        if l >= n_phones {
            return Err(Error::invalid(
                "phone_labels",
                format!("{}: label {l} at frame {t} >= {n_phones}", u.utterance_id),
            ));
        }
        data[t * n_phones + l] += 1.0 - smoothing;
    }
    FeatureMatrix::new(labels.len(), n_phones, data)
}
