use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Two-sided significance level, uncorrected.
pub const ALPHA: f64 = 0.05;
/// Below this many pairs the p-value is computed by exact enumeration.
pub const EXACT_MAX_N: usize = 9;
pub const MIN_PAIRS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskReason {
    InsufficientData,
    ZeroVariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorrelationCell {
    pub rho: f64,
    pub p: f64,
    pub n: usize,
    pub significant: bool,
    pub mask: Option<MaskReason>,
}

impl CorrelationCell {
    pub fn masked(n: usize, reason: MaskReason) -> Self {
        Self {
            rho: f64::NAN,
            p: f64::NAN,
            n,
            significant: false,
            mask: Some(reason),
        }
    }

    pub fn is_masked(&self) -> bool {
        self.mask.is_some()
    }
}

/// 1-based ranks; tied values share the mean of the positions they occupy.
pub fn rank(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) hold ranks i+1..=j
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

fn centered(r: &[f64]) -> Vec<f64> {
    let m = r.iter().sum::<f64>() / r.len() as f64;
    r.iter().map(|x| x - m).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Spearman correlation of the pairs where both values are finite.
pub fn spearman(x: &[f64], y: &[f64]) -> CorrelationCell {
    assert_eq!(x.len(), y.len(), "spearman inputs differ in length");
    let (xs, ys): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .filter(|(a, b)| a.is_finite() && b.is_finite())
        .map(|(a, b)| (*a, *b))
        .unzip();
    let n = xs.len();
    if n < MIN_PAIRS {
        return CorrelationCell::masked(n, MaskReason::InsufficientData);
    }
    let rx = centered(&rank(&xs));
    let ry = centered(&rank(&ys));
    let (sxx, syy) = (dot(&rx, &rx), dot(&ry, &ry));
    // Mid-ranks are multiples of 0.5, so a tied-everywhere vector is exactly zero.
    if sxx <= 0.0 || syy <= 0.0 {
        return CorrelationCell::masked(n, MaskReason::ZeroVariance);
    }
    let sxy = dot(&rx, &ry);
    let rho = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let p = if n <= EXACT_MAX_N {
        exact_p(&rx, &ry, sxy)
    } else {
        t_approx_p(rho, n)
    };
    CorrelationCell {
        rho,
        p,
        n,
        significant: p < ALPHA,
        mask: None,
    }
}

/// Two-sided p from the t distribution with n − 2 degrees of freedom.
pub fn t_approx_p(rho: f64, n: usize) -> f64 {
    if rho.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = rho * (df / (1.0 - rho * rho)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

/// Fraction of all n! rearrangements of `ry` whose |Σ rx·ry| reaches the
/// observed one (Heap's algorithm).
fn exact_p(rx: &[f64], ry: &[f64], observed: f64) -> f64 {
    let n = ry.len();
    let target = observed.abs() * (1.0 - 1e-12) - 1e-12;
    let mut perm = ry.to_vec();
    let mut c = vec![0usize; n];
    let mut hits: u64 = u64::from(dot(rx, &perm).abs() >= target);
    let mut total: u64 = 1;
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            total += 1;
            hits += u64::from(dot(rx, &perm).abs() >= target);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    hits as f64 / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_examples() {
        assert_eq!(rank(&[10.0, 20.0, 30.0]), [1.0, 2.0, 3.0]);
        assert_eq!(rank(&[5.0, 5.0]), [1.5, 1.5]);
        assert_eq!(rank(&[1.0, 2.0, 2.0, 4.0]), [1.0, 2.5, 2.5, 4.0]);
        assert_eq!(rank(&[3.0, 1.0, 3.0, 3.0]), [3.0, 1.0, 3.0, 3.0]);
    }

    #[test]
    fn perfect_monotone_relations() {
        let x: Vec<f64> = (0..12).map(f64::from).collect();
        let up: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        let down: Vec<f64> = x.iter().map(|v| -v * v).collect();
        let a = spearman(&x, &up);
        assert_eq!(a.rho, 1.0);
        assert_eq!(a.p, 0.0);
        assert!(a.significant);
        assert_eq!(spearman(&x, &down).rho, -1.0);
    }

    #[test]
    fn exact_p_for_five_perfect() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let c = spearman(&x, &x);
        assert_eq!(c.rho, 1.0);
        assert!((c.p - 2.0 / 120.0).abs() < 1e-15);
    }

    #[test]
    fn tied_example() {
        let c = spearman(&[1.0, 2.0, 2.0, 4.0], &[1.0, 3.0, 2.0, 4.0]);
        assert!((c.rho - 0.9486832980505138).abs() < 1e-12, "{}", c.rho);
    }

    #[test]
    fn masking() {
        assert_eq!(spearman(&[1.0, 2.0], &[2.0, 1.0]).mask, Some(MaskReason::InsufficientData));
        let c = spearman(&[1.0, 2.0, 3.0, 4.0], &[2.0, 2.0, 2.0, 2.0]);
        assert_eq!(c.mask, Some(MaskReason::ZeroVariance));
        assert!(!c.significant);
        // NaN pairs are dropped before counting.
        let c = spearman(&[1.0, f64::NAN, 3.0, 4.0], &[1.0, 2.0, f64::NAN, 4.0]);
        assert_eq!(c.n, 2);
        assert!(c.is_masked());
    }

    #[test]
    fn t_path_matches_reference_value() {
        // t = 0.5·sqrt(18/0.75) = 2.449…, two-sided p with 18 df
        let p = t_approx_p(0.5, 20);
        assert!((p - 0.024769558804109703).abs() < 1e-8, "{p}");
    }
}
