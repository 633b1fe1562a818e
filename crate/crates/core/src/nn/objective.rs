//! Softmax confidence and the paired canary objectives.
//!
//! Each [`ObjectiveFamily`] is a pair of losses. The [`Direction::In`] loss
//! is applied to models trained on the target and decreases as the target
//! class gains confidence; the [`Direction::Out`] loss is applied to models
//! trained without it and increases with that confidence. The canary
//! optimizer minimizes both, which pushes IN and OUT models apart.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveFamily {
    /// IN: cross-entropy `-log f_y`. OUT: reverse cross-entropy `-log(1 - f_y)`.
    CrossEntropy,
    /// IN: cross-entropy on `y`. OUT: cross-entropy on a fixed alternative label.
    CrossEntropyRandomLabel,
    /// IN: `max_{i≠y} z_i - z_y`. OUT: the margin `z_y - max_{i≠y} z_i`.
    CwMargin,
    /// IN: as [`ObjectiveFamily::CwMargin`]. OUT: the IN loss evaluated on the alternative label.
    CwMarginRandomLabel,
    /// IN: `-φ(f_y)`. OUT: `φ(f_y)`, with `φ(f) = log(f / (1 - f))`.
    ScaledLogScore,
    /// IN: `-z_y`. OUT: `z_y`.
    RawLogit,
}

impl ObjectiveFamily {
    pub const ALL: [ObjectiveFamily; 6] = [
        ObjectiveFamily::CrossEntropy,
        ObjectiveFamily::CrossEntropyRandomLabel,
        ObjectiveFamily::CwMargin,
        ObjectiveFamily::CwMarginRandomLabel,
        ObjectiveFamily::ScaledLogScore,
        ObjectiveFamily::RawLogit,
    ];

    pub fn uses_alt_label(self) -> bool {
        matches!(
            self,
            ObjectiveFamily::CrossEntropyRandomLabel | ObjectiveFamily::CwMarginRandomLabel
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    In,
    Out,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObjectiveKind {
    pub family: ObjectiveFamily,
    pub direction: Direction,
}

impl ObjectiveKind {
    pub const fn new(family: ObjectiveFamily, direction: Direction) -> Self {
        ObjectiveKind { family, direction }
    }

    fn needs_alt(self) -> bool {
        self.direction == Direction::Out && self.family.uses_alt_label()
    }
}

fn max_of(z: &[f64]) -> f64 {
    z.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn logsumexp(z: &[f64]) -> f64 {
    let m = max_of(z);
    m + z.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

/// `log Σ_{i≠y} exp(z_i)`.
fn logsumexp_except(z: &[f64], y: usize) -> f64 {
    let m = z
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != y)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = z
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != y)
        .map(|(_, &v)| (v - m).exp())
        .sum();
    m + s.ln()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = max_of(z);
    let e: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let lse = logsumexp(z);
    z.iter().map(|&v| v - lse).collect()
}

/// Softmax probability of class `y`, computed with max subtraction.
pub fn softmax_conf(logits: &[f64], y: usize) -> Result<f64> {
    check_label(logits, y)?;
    let m = max_of(logits);
    let s: f64 = logits.iter().map(|&v| (v - m).exp()).sum();
    Ok((logits[y] - m).exp() / s)
}

/// `z_y - max_{i≠y} z_i` and the index attaining the maximum.
fn margin_with_runner_up(z: &[f64], y: usize) -> (f64, usize) {
    let (j, zj) = z
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != y)
        .fold((usize::MAX, f64::NEG_INFINITY), |best, (i, &v)| {
            if v > best.1 {
                (i, v)
            } else {
                best
            }
        });
    (z[y] - zj, j)
}

/// Carlini-Wagner style margin `z_y - max_{i≠y} z_i` (no confidence offset).
pub fn cw_margin(logits: &[f64], y: usize) -> Result<f64> {
    check_label(logits, y)?;
    Ok(margin_with_runner_up(logits, y).0)
}

fn check_label(logits: &[f64], y: usize) -> Result<()> {
    if y >= logits.len() {
        return Err(Error::IndexOutOfRange {
            index: y,
            len: logits.len(),
        });
    }
    Ok(())
}

fn resolve_alt(logits: &[f64], y: usize, alt: Option<usize>, kind: ObjectiveKind) -> Result<usize> {
    let a = alt.ok_or_else(|| {
        Error::InvalidArgument(format!("{:?} requires an alternative label", kind.family))
    })?;
    check_label(logits, a)?;
    if a == y {
        return Err(Error::InvalidArgument(
            "alternative label must differ from the true label".into(),
        ));
    }
    Ok(a)
}

/// Loss value of `kind` at `logits` for true label `y`.
///
/// `alt_label` is required by the OUT side of the random-label families and
/// ignored otherwise.
pub fn objective_value(
    logits: &[f64],
    y: usize,
    alt_label: Option<usize>,
    kind: ObjectiveKind,
) -> Result<f64> {
    Ok(value_and_grad(logits, y, alt_label, kind)?.0)
}

/// Loss value and its gradient with respect to the logits.
pub(crate) fn value_and_grad(
    z: &[f64],
    y: usize,
    alt_label: Option<usize>,
    kind: ObjectiveKind,
) -> Result<(f64, Vec<f64>)> {
    use Direction::{In, Out};
    use ObjectiveFamily::*;

    check_label(z, y)?;
    let k = z.len();
    let unit = |i: usize| {
        let mut e = vec![0.0; k];
        e[i] = 1.0;
        e
    };
    // cross-entropy on label `t`: lse - z_t, gradient p - e_t
    let cross_entropy = |t: usize| {
        let lse = logsumexp(z);
        let mut g = softmax(z);
        g[t] -= 1.0;
        (lse - z[t], g)
    };
    // cw loss on label `t`: z_j - z_t where j is the runner-up
    let cw_loss = |t: usize| {
        let (margin, j) = margin_with_runner_up(z, t);
        let mut g = vec![0.0; k];
        g[j] += 1.0;
        g[t] -= 1.0;
        (-margin, g)
    };
    // φ(f_y) = z_y - log Σ_{i≠y} e^{z_i}; gradient e_y - q where q is the
    // softmax over the classes other than y
    let scaled_log = || {
        let rest = logsumexp_except(z, y);
        let mut g: Vec<f64> = z.iter().map(|&v| -(v - rest).exp()).collect();
        g[y] = 1.0;
        (z[y] - rest, g)
    };

    let alt = if kind.needs_alt() {
        Some(resolve_alt(z, y, alt_label, kind)?)
    } else {
        None
    };

    let out = match (kind.family, kind.direction) {
        (CrossEntropy | CrossEntropyRandomLabel, In) => cross_entropy(y),
        (CrossEntropy, Out) => {
            // -log(1 - f_y) = lse - lse_{-y}
            let lse = logsumexp(z);
            let rest = logsumexp_except(z, y);
            let p = softmax(z);
            let g = z
                .iter()
                .zip(&p)
                .enumerate()
                .map(|(i, (&v, &pi))| if i == y { pi } else { pi - (v - rest).exp() })
                .collect();
            (lse - rest, g)
        }
        (CrossEntropyRandomLabel, Out) => cross_entropy(alt.expect("alt resolved")),
        (CwMargin | CwMarginRandomLabel, In) => cw_loss(y),
        (CwMargin, Out) => {
            let (v, g) = cw_loss(y);
            (-v, g.into_iter().map(|x| -x).collect())
        }
        (CwMarginRandomLabel, Out) => cw_loss(alt.expect("alt resolved")),
        (ScaledLogScore, Out) => scaled_log(),
        (ScaledLogScore, In) => {
            let (v, g) = scaled_log();
            (-v, g.into_iter().map(|x| -x).collect())
        }
        (RawLogit, Out) => (z[y], unit(y)),
        (RawLogit, In) => {
            let mut g = vec![0.0; k];
            g[y] = -1.0;
            (-z[y], g)
        }
    };
    Ok(out)
}
