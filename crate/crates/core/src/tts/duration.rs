use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::attention::{argmax, attention_alignment};
use crate::error::{Error, Result};

/// Frames spent on each phoneme of one utterance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DurationSequence {
    pub utterance_id: String,
    pub durations: Vec<usize>,
}

impl DurationSequence {
    pub fn total(&self) -> usize {
        self.durations.iter().sum()
    }
}

/// Counts, per encoder position, the decoder frames whose argmax lands there.
/// No monotonic repair is applied.
pub fn durations_from_alignment(alignment: &Array2<f64>) -> Result<Vec<usize>> {
    let (frames, phones) = alignment.dim();
    if frames == 0 || phones == 0 {
        return Err(Error::EmptyInput("alignment has no decoder frames".into()));
    }
    let mut d = vec![0; phones];
    for row in alignment.rows() {
        d[argmax(row.iter().copied())] += 1;
    }
    Ok(d)
}

/// Picks the matrix with the best mean diagonality over a set of utterances.
/// `candidates[u][h]` is head `h`'s alignment for utterance `u`.
pub fn select_head(candidates: &[Vec<Array2<f64>>]) -> Result<(usize, f64)> {
    let heads = candidates.first().map(Vec::len).unwrap_or(0);
    if heads == 0 {
        return Err(Error::EmptyInput("no attention heads to choose from".into()));
    }
    let mut best = (0, f64::NEG_INFINITY);
    for h in 0..heads {
        let mut score = 0.0;
        for utt in candidates {
            score += attention_alignment(&utt[h])?;
        }
        score /= candidates.len() as f64;
        if score > best.1 {
            best = (h, score);
        }
    }
    Ok(best)
}

/// Share of phonemes that received no frames.
pub fn zero_duration_fraction(d: &[usize]) -> f64 {
    d.iter().filter(|&&x| x == 0).count() as f64 / d.len().max(1) as f64
}

/// Rounds real-valued durations to integers whose sum is `round(sum(d))`:
/// floor everything, then hand the remaining frames to the largest
/// fractional parts (ties to the earlier phoneme).
pub fn round_preserving_total(d: &[f64]) -> Vec<usize> {
    let clean: Vec<f64> = d.iter().map(|&x| if x.is_finite() { x.max(0.0) } else { 0.0 }).collect();
    let total = clean.iter().sum::<f64>().round() as usize;
    let mut out: Vec<usize> = clean.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = out.iter().sum();
    let mut order: Vec<usize> = (0..clean.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = clean[a] - clean[a].floor();
        let fb = clean[b] - clean[b].floor();
        fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        out[i] += 1;
    }
    out
}

/// Repeats row `i` of `x` `durations[i]` times.
pub fn length_regulate(x: &Array2<f64>, durations: &[usize]) -> Array2<f64> {
    let idx = expand_indices(durations);
    Array2::from_shape_fn((idx.len(), x.ncols()), |(r, c)| x[[idx[r], c]])
}

pub fn expand_indices(durations: &[usize]) -> Vec<usize> {
    durations.iter().enumerate().flat_map(|(i, &d)| std::iter::repeat_n(i, d)).collect()
}

pub fn read_durations(text: &str) -> Result<Vec<DurationSequence>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let (id, rest) = line
            .split_once('\t')
            .ok_or_else(|| Error::Format(format!("durations line {}: missing tab", n + 1)))?;
        let durations = rest
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<Vec<usize>, _>>()
            .map_err(|e| Error::Format(format!("durations line {}: {e}", n + 1)))?;
        out.push(DurationSequence { utterance_id: id.to_string(), durations });
    }
    Ok(out)
}

pub fn write_durations(seqs: &[DurationSequence]) -> String {
    let mut s = String::new();
    for d in seqs {
        let v: Vec<String> = d.durations.iter().map(usize::to_string).collect();
        let _ = writeln!(s, "{}\t{}", d.utterance_id, v.join(" "));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::seeded_rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn one_hot(argmax: &[usize], t: usize) -> Array2<f64> {
        Array2::from_shape_fn((argmax.len(), t), |(i, j)| if argmax[i] == j { 1.0 } else { 0.0 })
    }

    #[test]
    fn counting_examples() {
        assert_eq!(durations_from_alignment(&one_hot(&[0, 0, 1, 2, 2, 2], 3)).unwrap(), vec![2, 1, 3]);
        assert_eq!(durations_from_alignment(&one_hot(&[0, 2, 1], 3)).unwrap(), vec![1, 1, 1]);
        assert!(durations_from_alignment(&Array2::zeros((0, 3))).is_err());
    }

    #[test]
    fn rounding_keeps_total() {
        assert_eq!(round_preserving_total(&[3.0; 4]), vec![3; 4]);
        assert_eq!(round_preserving_total(&[1.4, 1.4, 1.2]), vec![2, 1, 1]);
        assert_eq!(round_preserving_total(&[0.2, 0.2]), vec![0, 0]);
    }

    #[test]
    fn file_round_trip() {
        let d = vec![DurationSequence { utterance_id: "a".into(), durations: vec![0, 3, 2] }];
        assert_eq!(read_durations(&write_durations(&d)).unwrap(), d);
    }

    #[test]
    fn head_selection_prefers_diagonal() {
        let diag = one_hot(&[0, 1, 2, 3], 4);
        let rev = one_hot(&[3, 2, 1, 0], 4);
        let (h, s) = select_head(&[vec![rev.clone(), diag.clone()], vec![rev, diag]]).unwrap();
        assert_eq!((h, s), (1, 1.0));
    }

    proptest! {
        #[test]
        fn conservation(frames in 1usize..60, t in 1usize..12, seed in 0u64..1000) {
            let mut rng = seeded_rng(seed);
            let a = Array2::from_shape_fn((frames, t), |_| rng.gen_range(0.0..1.0));
            let d = durations_from_alignment(&a).unwrap();
            prop_assert_eq!(d.iter().sum::<usize>(), frames);
            prop_assert_eq!(d.len(), t);
        }

        #[test]
        fn regulator_length(d in proptest::collection::vec(0usize..6, 1..20)) {
            let x = Array2::from_shape_fn((d.len(), 3), |(i, j)| (i * 3 + j) as f64);
            let y = length_regulate(&x, &d);
            prop_assert_eq!(y.nrows(), d.iter().sum::<usize>());
        }

        #[test]
        fn rounding_total(d in proptest::collection::vec(0.0f64..8.0, 1..20)) {
            let r = round_preserving_total(&d);
            prop_assert_eq!(r.iter().sum::<usize>(), d.iter().sum::<f64>().round() as usize);
            for (a, b) in r.iter().zip(&d) {
                prop_assert!((*a as f64 - b).abs() < 1.0 + 1e-9);
            }
        }
    }
}
