use serde::{Deserialize, Serialize};

/// Tolerance for endpoint comparisons, in seconds.
pub const EPS: f64 = 1e-9;

/// Sorted, disjoint, non-empty `(start, end)` intervals. Touching intervals
/// are merged on construction and pieces shorter than [`EPS`] are dropped.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IntervalSet {
    spans: Vec<(f64, f64)>,
}

impl IntervalSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let mut v: Vec<(f64, f64)> = pairs
            .into_iter()
            .filter(|(a, b)| a.is_finite() && b.is_finite() && b - a > EPS)
            .collect();
        v.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
        let mut spans: Vec<(f64, f64)> = Vec::with_capacity(v.len());
        for (a, b) in v {
            match spans.last_mut() {
                Some(last) if a <= last.1 + EPS => last.1 = last.1.max(b),
                _ => spans.push((a, b)),
            }
        }
        Self { spans }
    }

    pub fn spans(&self) -> &[(f64, f64)] {
        &self.spans
    }

    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.spans.iter().map(|(a, b)| b - a).sum()
    }

    pub fn contains(&self, t: f64) -> bool {
        self.spans.iter().any(|&(a, b)| a - EPS <= t && t <= b + EPS)
    }

    /// True if `[start, end]` lies inside a single span.
    pub fn covers(&self, start: f64, end: f64) -> bool {
        self.spans
            .iter()
            .any(|&(a, b)| a - EPS <= start && end <= b + EPS)
    }

    pub fn union(&self, other: &IntervalSet) -> IntervalSet {
        IntervalSet::from_pairs(self.spans.iter().chain(other.spans.iter()).copied())
    }

    /// Two-pointer sweep over both sorted lists.
    pub fn intersect(&self, other: &IntervalSet) -> IntervalSet {
        let (a, b) = (&self.spans, &other.spans);
        let (mut i, mut j) = (0, 0);
        let mut out = Vec::new();
        while i < a.len() && j < b.len() {
            let lo = a[i].0.max(b[j].0);
            let hi = a[i].1.min(b[j].1);
            if hi - lo > EPS {
                out.push((lo, hi));
            }
            if a[i].1 < b[j].1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        IntervalSet::from_pairs(out)
    }

    /// Set difference `self \ other`.
    pub fn subtract(&self, other: &IntervalSet) -> IntervalSet {
        let b = &other.spans;
        let mut out = Vec::new();
        let mut j = 0;
        for &(start, end) in &self.spans {
            let mut cur = start;
            while j < b.len() && b[j].1 <= cur {
                j += 1;
            }
            let mut k = j;
            while k < b.len() && b[k].0 < end {
                if b[k].0 > cur {
                    out.push((cur, b[k].0));
                }
                cur = cur.max(b[k].1);
                if cur >= end {
                    break;
                }
                k += 1;
            }
            if cur < end {
                out.push((cur, end));
            }
        }
        IntervalSet::from_pairs(out)
    }

    /// Keeps spans whose duration lies in `[min, max]` (inclusive, with
    /// [`EPS`] slack).
    pub fn filter_duration(&self, min: f64, max: f64) -> IntervalSet {
        IntervalSet {
            spans: self
                .spans
                .iter()
                .copied()
                .filter(|(a, b)| {
                    let d = b - a;
                    d >= min - EPS && d <= max + EPS
                })
                .collect(),
        }
    }

    /// Clips every span to `[lo, hi]`.
    pub fn clamp(&self, lo: f64, hi: f64) -> IntervalSet {
        self.intersect(&IntervalSet::from_pairs([(lo, hi)]))
    }
}

impl FromIterator<(f64, f64)> for IntervalSet {
    fn from_iter<I: IntoIterator<Item = (f64, f64)>>(iter: I) -> Self {
        IntervalSet::from_pairs(iter)
    }
}
