use std::marker::PhantomData;

use super::QuadValue;
use crate::scalar::Real;

const MAX_COLUMNS: usize = 40;

/// Incremental Wynn epsilon extrapolation of a sequence of partial sums.
///
/// Only the latest anti-diagonal of the epsilon table is kept:
/// `diag[k]` holds eps_k of the newest diagonal, so pushing `s_n` costs O(k).
#[derive(Clone, Debug)]
pub struct Wynn<V, T> {
    diag: Vec<V>,
    history: Vec<V>,
    _t: PhantomData<T>,
}

impl<V: QuadValue<T>, T: Real> Default for Wynn<V, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<V: QuadValue<T>, T: Real> Wynn<V, T> {
    pub fn new() -> Self {
        Wynn {
            diag: Vec::new(),
            history: Vec::new(),
            _t: PhantomData,
        }
    }

    /// Adds the next partial sum and returns the current extrapolated limit.
    pub fn push(&mut self, s: V) -> V {
        let mut next = Vec::with_capacity(self.diag.len() + 1);
        next.push(s);
        for k in 0..self.diag.len().min(MAX_COLUMNS) {
            let diff = next[k] - self.diag[k];
            if diff.norm() <= T::min_positive_value() || !diff.recip().is_finite() {
                break;
            }
            let back = if k == 0 { V::zero() } else { self.diag[k - 1] };
            let v = back + diff.recip();
            if !v.is_finite() {
                break;
            }
            next.push(v);
        }
        self.diag = next;
        let best_idx = (self.diag.len() - 1) & !1;
        let best = self.diag[best_idx];
        self.history.push(best);
        best
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    /// Spread of the last three extrapolated values; infinite with fewer.
    pub fn error(&self) -> T {
        let n = self.history.len();
        if n < 3 {
            return T::infinity();
        }
        let a = self.history[n - 1];
        let b = self.history[n - 2];
        let c = self.history[n - 3];
        (a - b).norm() + (b - c).norm()
    }

    pub fn estimate(&self) -> Option<V> {
        self.history.last().copied()
    }
}
