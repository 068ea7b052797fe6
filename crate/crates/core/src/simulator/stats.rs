/// Two-sided 99% normal quantile.
pub const Z99: f64 = 2.575_829_303_548_901;

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub std_err: f64,
    pub max: f64,
}

impl Summary {
    pub fn from_values(values: impl IntoIterator<Item = f64>) -> Self {
        let mut acc = Accumulator::default();
        for v in values {
            acc.push(v);
        }
        acc.summary()
    }

    /// `(mean - z se, mean + z se)` at 99%.
    pub fn ci99(&self) -> (f64, f64) {
        (self.mean - Z99 * self.std_err, self.mean + Z99 * self.std_err)
    }
}

/// Streaming mean and variance (Welford).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Accumulator {
    count: usize,
    mean: f64,
    m2: f64,
    max: f64,
}

impl Accumulator {
    pub fn push(&mut self, v: f64) {
        if self.count == 0 || v > self.max {
            self.max = v;
        }
        self.count += 1;
        let d = v - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (v - self.mean);
    }

    pub fn merge(&mut self, other: &Accumulator) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let d = other.mean - self.mean;
        self.mean += d * other.count as f64 / n;
        self.m2 += other.m2 + d * d * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
        self.max = self.max.max(other.max);
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn summary(&self) -> Summary {
        let var = if self.count > 1 {
            self.m2 / (self.count - 1) as f64
        } else {
            0.0
        };
        Summary {
            count: self.count,
            mean: if self.count == 0 { f64::NAN } else { self.mean },
            std_dev: var.sqrt(),
            std_err: if self.count > 0 {
                (var / self.count as f64).sqrt()
            } else {
                f64::NAN
            },
            max: if self.count == 0 { f64::NAN } else { self.max },
        }
    }
}

/// Lengths of consecutive-success runs per user.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunTracker {
    current: Option<(usize, u64)>,
    runs: Vec<Accumulator>,
}

impl RunTracker {
    pub fn new(users: usize) -> Self {
        Self {
            current: None,
            runs: vec![Accumulator::default(); users],
        }
    }

    /// Feeds the winner of one slot, if any.
    pub fn observe(&mut self, winner: Option<usize>) {
        self.current = match (self.current, winner) {
            (Some((u, len)), Some(w)) if u == w => Some((u, len + 1)),
            (prev, w) => {
                if let Some((u, len)) = prev {
                    self.runs[u].push(len as f64);
                }
                w.map(|w| (w, 1))
            }
        };
    }

    /// Closes an open run, counting it as it stands.
    pub fn finish(&mut self) {
        self.observe(None);
    }

    pub fn merge(&mut self, other: &RunTracker) {
        for (a, b) in self.runs.iter_mut().zip(&other.runs) {
            a.merge(b);
        }
    }

    /// Mean run length per user, NaN for users that never succeeded.
    pub fn mean_lengths(&self) -> Vec<f64> {
        self.runs.iter().map(|a| a.summary().mean).collect()
    }

    /// Reciprocal of the longest mean run; 1 when nobody succeeded.
    pub fn fairness(&self) -> f64 {
        self.mean_lengths()
            .iter()
            .filter(|m| m.is_finite())
            .map(|m| 1.0 / m)
            .fold(1.0, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welford_matches_two_pass() {
        let xs = [1.0, 4.0, 2.5, 8.0, -1.0];
        let s = Summary::from_values(xs);
        let mean = xs.iter().sum::<f64>() / 5.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
        assert!((s.mean - mean).abs() < 1e-12);
        assert!((s.std_dev - var.sqrt()).abs() < 1e-12);
        assert_eq!(s.max, 8.0);

        let mut a = Accumulator::default();
        let mut b = Accumulator::default();
        xs[..2].iter().for_each(|x| a.push(*x));
        xs[2..].iter().for_each(|x| b.push(*x));
        a.merge(&b);
        assert!((a.summary().std_dev - s.std_dev).abs() < 1e-12);
    }

    #[test]
    fn run_lengths() {
        let mut t = RunTracker::new(2);
        for w in [Some(0), Some(0), None, Some(1), Some(0), Some(0), Some(0)] {
            t.observe(w);
        }
        t.finish();
        let m = t.mean_lengths();
        assert_eq!(m, vec![2.5, 1.0]);
        assert_eq!(t.fairness(), 0.4);
        assert_eq!(RunTracker::new(3).fairness(), 1.0);
    }
}
