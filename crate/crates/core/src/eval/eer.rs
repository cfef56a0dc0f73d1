use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EerResult {
    pub eer: f64,
    pub threshold: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
}

/// Operating points at thresholds `-inf`, the midpoints between adjacent
/// distinct scores, and `+inf`. A trial is accepted when `score > threshold`.
struct Sweep {
    thresholds: Vec<f64>,
    /// Targets rejected at each threshold.
    miss: Vec<u64>,
    /// Nontargets accepted at each threshold.
    false_alarm: Vec<u64>,
    n_target: u64,
    n_nontarget: u64,
}

fn sweep(scores: &[f64], labels: &[bool]) -> Result<Sweep> {
    if scores.len() != labels.len() {
        return Err(Error::dim("EER labels", scores.len(), labels.len()));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::invalid("scores", format!("non-finite score {s}")));
    }
    let n_target = labels.iter().filter(|&&l| l).count() as u64;
    let n_nontarget = labels.len() as u64 - n_target;
    if n_target == 0 || n_nontarget == 0 {
        return Err(Error::invalid(
            "trials",
            format!("need both classes, got {n_target} target and {n_nontarget} nontarget"),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut thresholds = vec![f64::NEG_INFINITY];
    let mut miss = vec![0];
    let mut false_alarm = vec![n_nontarget];
    let (mut tgt_below, mut non_below) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tgt_below += 1;
            } else {
                non_below += 1;
            }
            i += 1;
        }
        let next = if i < order.len() {
            0.5 * (s + scores[order[i]])
        } else {
            f64::INFINITY
        };
        thresholds.push(next);
        miss.push(tgt_below);
        false_alarm.push(n_nontarget - non_below);
    }
    Ok(Sweep {
        thresholds,
        miss,
        false_alarm,
        n_target,
        n_nontarget,
    })
}

/// Equal error rate by linear interpolation between the two adjacent
/// operating points where the miss rate first reaches the false-alarm rate.
///
/// The reported threshold is interpolated the same way, with the infinite
/// end thresholds replaced by the extreme scores.
pub fn compute_eer(scores: &[f64], labels: &[bool]) -> Result<EerResult> {
    let sw = sweep(scores, labels)?;
    let (nt, nn) = (sw.n_target, sw.n_nontarget);
    let frr = |k: usize| sw.miss[k] as f64 / nt as f64;
    let far = |k: usize| sw.false_alarm[k] as f64 / nn as f64;
    // Sign of FRR - FAR, compared exactly on integer counts.
    let sign = |k: usize| (sw.miss[k] as u128 * nn as u128).cmp(&(sw.false_alarm[k] as u128 * nt as u128));
    let k = (0..sw.thresholds.len())
        .find(|&k| sign(k) != std::cmp::Ordering::Less)
        .expect("FRR reaches 1 at +inf");
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let finite = |t: f64| t.clamp(lo, hi);
    let (eer, threshold) = if sign(k) == std::cmp::Ordering::Equal {
        (far(k), finite(sw.thresholds[k]))
    } else {
        let d0 = frr(k - 1) - far(k - 1);
        let d1 = frr(k) - far(k);
        let t = -d0 / (d1 - d0);
        let eer = far(k - 1) + t * (far(k) - far(k - 1));
        let th0 = finite(sw.thresholds[k - 1]);
        let th1 = finite(sw.thresholds[k]);
        (eer, th0 + t * (th1 - th0))
    };
    Ok(EerResult {
        eer,
        threshold,
        n_target: nt as usize,
        n_nontarget: nn as usize,
    })
}

/// `(FAR, FRR)` at every threshold of the sweep, in increasing threshold
/// order: `m + 1` points for `m` distinct scores.
pub fn det_points(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    let sw = sweep(scores, labels)?;
    Ok((0..sw.thresholds.len())
        .map(|k| {
            (
                sw.false_alarm[k] as f64 / sw.n_nontarget as f64,
                sw.miss[k] as f64 / sw.n_target as f64,
            )
        })
        .collect())
}
