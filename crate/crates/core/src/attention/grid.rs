use crate::error::{Error, Result};

/// Token grid shape. Flat order is row-major with the view slowest and the
/// spatial column fastest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridIndex {
    pub n_views: usize,
    pub n_time: usize,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TokenCoord {
    pub v: usize,
    pub t: usize,
    pub p: usize,
    pub q: usize,
}

impl GridIndex {
    pub fn new(n_views: usize, n_time: usize, rows: usize, cols: usize) -> Self {
        Self {
            n_views,
            n_time,
            rows,
            cols,
        }
    }

    /// A grid whose spatial tokens form a single row of length `n_spatial`.
    pub fn with_spatial(n_views: usize, n_time: usize, n_spatial: usize) -> Self {
        Self::new(n_views, n_time, 1, n_spatial)
    }

    pub fn n_spatial(&self) -> usize {
        self.rows * self.cols
    }

    pub fn n_slots(&self) -> usize {
        self.n_views * self.n_time
    }

    pub fn len(&self) -> usize {
        self.n_slots() * self.n_spatial()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self, v: usize, t: usize, p: usize, q: usize) -> Result<usize> {
        if v >= self.n_views || t >= self.n_time || p >= self.rows || q >= self.cols {
            return Err(Error::input(format!(
                "token ({v}, {t}, {p}, {q}) is outside the {}x{}x{}x{} grid",
                self.n_views, self.n_time, self.rows, self.cols
            )));
        }
        Ok(((v * self.n_time + t) * self.rows + p) * self.cols + q)
    }

    pub fn unflatten(&self, i: usize) -> Result<TokenCoord> {
        if i >= self.len() {
            return Err(Error::input(format!("flat index {i} out of range {}", self.len())));
        }
        let q = i % self.cols;
        let rest = i / self.cols;
        let p = rest % self.rows;
        let rest = rest / self.rows;
        Ok(TokenCoord {
            v: rest / self.n_time,
            t: rest % self.n_time,
            p,
            q,
        })
    }

    /// `(view, time)` slot of a flat token index.
    #[inline]
    pub fn slot_of(&self, i: usize) -> usize {
        i / self.n_spatial()
    }
}

/// Position after folding the view axis into time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CollapsedPosition {
    pub t_prime: usize,
    pub p: usize,
    pub q: usize,
}

/// `(v, t, p, q) -> (v * t_max + t, p, q)`, so a multi-view clip reads as
/// one long single-view sequence.
pub fn collapse_position(v: usize, t: usize, p: usize, q: usize, t_max: usize) -> Result<CollapsedPosition> {
    if t >= t_max {
        return Err(Error::input(format!("time index {t} must be below t_max {t_max}")));
    }
    Ok(CollapsedPosition {
        t_prime: v * t_max + t,
        p,
        q,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn flatten_examples() {
        let g = GridIndex::with_spatial(2, 4, 3);
        assert_eq!(g.flatten(0, 0, 0, 0).unwrap(), 0);
        assert_eq!(g.flatten(1, 0, 0, 0).unwrap(), 12);
        assert_eq!(g.flatten(1, 3, 0, 2).unwrap(), g.len() - 1);
        assert!(matches!(g.flatten(2, 0, 0, 0), Err(Error::Input(_))));
        assert!(g.unflatten(g.len()).is_err());
    }

    #[test]
    fn flatten_unflatten_exhaustive() {
        // every grid with at most 10,000 tokens over small axis ranges
        for nv in 1..=5 {
            for nt in 1..=8 {
                for rows in 1..=6 {
                    for cols in 1..=6 {
                        let g = GridIndex::new(nv, nt, rows, cols);
                        if g.len() > 10_000 {
                            continue;
                        }
                        for i in 0..g.len() {
                            let c = g.unflatten(i).unwrap();
                            assert_eq!(g.flatten(c.v, c.t, c.p, c.q).unwrap(), i);
                            assert_eq!(g.slot_of(i), c.v * nt + c.t);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn collapse_examples() {
        assert_eq!(
            collapse_position(0, 3, 1, 2, 10).unwrap(),
            CollapsedPosition { t_prime: 3, p: 1, q: 2 }
        );
        assert_eq!(collapse_position(2, 1, 5, 6, 10).unwrap().t_prime, 21);
        assert!(matches!(collapse_position(0, 10, 0, 0, 10), Err(Error::Input(_))));
    }

    #[test]
    fn collapse_injective_on_grid() {
        let mut seen = HashSet::new();
        for v in 0..3 {
            for t in 0..4 {
                for p in 0..2 {
                    for q in 0..2 {
                        assert!(seen.insert(collapse_position(v, t, p, q, 4).unwrap()));
                        assert!(collapse_position(v, t, p, q, 4).unwrap().t_prime < 3 * 4);
                    }
                }
            }
        }
    }
}
