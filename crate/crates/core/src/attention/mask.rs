use num_rational::Ratio;
use serde::Serialize;

use crate::error::{Error, Result};

/// Attention mask over `(view, time)` slots; spatial positions inside an
/// allowed slot pair are fully connected.
pub trait SlotMask {
    fn n_slots(&self) -> usize;
    fn allows(&self, query_slot: usize, key_slot: usize) -> bool;

    /// Allowed key slots for each query slot, in ascending order.
    fn key_slots(&self) -> Vec<Vec<usize>> {
        let n = self.n_slots();
        (0..n)
            .map(|a| (0..n).filter(|&b| self.allows(a, b)).collect())
            .collect()
    }
}

/// Fused view/time mask. View 0 is the reference view.
///
/// Query slot `(v_i, t_i)` may attend key slot `(v_j, t_j)` when the views
/// match, when the time slots match, or when `t_i < f`, `t_j = t_i + f` and
/// `v_j` is the reference view. The last rule is one-directional.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TVMask {
    n_views: usize,
    f: usize,
    pair: Vec<bool>,
}

impl TVMask {
    pub fn n_views(&self) -> usize {
        self.n_views
    }

    /// Number of target frames per view (half the time axis).
    pub fn half(&self) -> usize {
        self.f
    }

    pub fn n_time(&self) -> usize {
        2 * self.f
    }

    #[inline]
    pub fn slot(&self, v: usize, t: usize) -> usize {
        v * 2 * self.f + t
    }

    pub fn pair(&self, vi: usize, ti: usize, vj: usize, tj: usize) -> bool {
        let n = self.n_slots();
        self.pair[self.slot(vi, ti) * n + self.slot(vj, tj)]
    }

    /// True when the pair is connected by the view or time rule.
    pub fn intra(&self, vi: usize, ti: usize, vj: usize, tj: usize) -> bool {
        vi == vj || ti == tj
    }

    pub fn true_count(&self) -> usize {
        self.pair.iter().filter(|&&b| b).count()
    }

    /// Entries set only by the cross-half rule.
    pub fn cross_half_edges(&self) -> usize {
        let mut n = 0;
        for vi in 0..self.n_views {
            for ti in 0..self.n_time() {
                for vj in 0..self.n_views {
                    for tj in 0..self.n_time() {
                        if self.pair(vi, ti, vj, tj) && !self.intra(vi, ti, vj, tj) {
                            n += 1;
                        }
                    }
                }
            }
        }
        n
    }

    /// Count of intra-view or intra-time entries, by enumeration.
    pub fn intra_count(&self) -> usize {
        self.true_count() - self.cross_half_edges()
    }

    /// Fraction of slot pairs allowed by the view and time rules alone.
    pub fn measured_density(&self) -> f64 {
        self.intra_count() as f64 / (self.n_slots() * self.n_slots()) as f64
    }

    /// Fraction of slot pairs allowed by all three rules.
    pub fn measured_density_with_cross_half(&self) -> f64 {
        self.true_count() as f64 / (self.n_slots() * self.n_slots()) as f64
    }

    pub fn report(&self) -> MaskReport {
        let formula = mask_density(self.n_views, self.f);
        MaskReport {
            n_views: self.n_views,
            frames: self.f,
            formula_density: *formula.numer() as f64 / *formula.denom() as f64,
            formula_numerator: *formula.numer(),
            formula_denominator: *formula.denom(),
            measured_density: self.measured_density(),
            measured_density_with_cross_half: self.measured_density_with_cross_half(),
            cross_half_edges: self.cross_half_edges(),
        }
    }

    /// Plain (P1) PBM image of the slot-pair mask; allowed pairs are black.
    pub fn to_pbm(&self) -> String {
        let n = self.n_slots();
        let mut s = format!("P1\n{n} {n}\n");
        for a in 0..n {
            let row: Vec<&str> = (0..n)
                .map(|b| if self.pair[a * n + b] { "1" } else { "0" })
                .collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }
}

impl SlotMask for TVMask {
    fn n_slots(&self) -> usize {
        self.n_views * 2 * self.f
    }

    #[inline]
    fn allows(&self, a: usize, b: usize) -> bool {
        self.pair[a * self.n_slots() + b]
    }
}

/// Per-view attention: a slot sees every slot of its own view.
#[derive(Debug, Clone, Copy)]
pub struct ViewMask {
    pub n_views: usize,
    pub n_time: usize,
}

impl SlotMask for ViewMask {
    fn n_slots(&self) -> usize {
        self.n_views * self.n_time
    }

    fn allows(&self, a: usize, b: usize) -> bool {
        a / self.n_time == b / self.n_time
    }
}

/// Every slot sees every slot.
#[derive(Debug, Clone, Copy)]
pub struct FullMask {
    pub n_slots: usize,
}

impl SlotMask for FullMask {
    fn n_slots(&self) -> usize {
        self.n_slots
    }

    fn allows(&self, _: usize, _: usize) -> bool {
        true
    }
}

/// Density figures for one mask configuration, as written by `build-mask`.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct MaskReport {
    pub n_views: usize,
    pub frames: usize,
    pub formula_density: f64,
    pub formula_numerator: u64,
    pub formula_denominator: u64,
    pub measured_density: f64,
    pub measured_density_with_cross_half: f64,
    pub cross_half_edges: usize,
}

pub fn build_mask(n_views: usize, f: usize) -> Result<TVMask> {
    if n_views == 0 || f == 0 {
        return Err(Error::input(format!(
            "mask needs at least one view and one frame, got {n_views} views, {f} frames"
        )));
    }
    let n_time = 2 * f;
    let n = n_views * n_time;
    let mut pair = vec![false; n * n];
    for vi in 0..n_views {
        for ti in 0..n_time {
            for vj in 0..n_views {
                for tj in 0..n_time {
                    let allowed = vi == vj || ti == tj || (ti < f && tj == ti + f && vj == 0);
                    pair[(vi * n_time + ti) * n + vj * n_time + tj] = allowed;
                }
            }
        }
    }
    Ok(TVMask { n_views, f, pair })
}

/// Closed-form density of the view/time rules, `(2f + N_v - 1) / (2f N_v)`.
pub fn mask_density(n_views: usize, f: usize) -> Ratio<u64> {
    let (nv, f) = (n_views as u64, f as u64);
    Ratio::new(2 * f + nv - 1, 2 * f * nv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_examples() {
        let m = build_mask(4, 3).unwrap();
        // same view, different time
        assert!(m.pair(1, 0, 1, 3));
        // same time, different view
        assert!(m.pair(2, 1, 3, 1));
        // target query reaches the reference view's condition slot
        assert!(m.pair(2, 0, 0, 3));
        // nothing connects these
        assert!(!m.pair(2, 0, 3, 1));
        // the cross-half rule is one-way
        assert!(!m.pair(0, 3, 2, 0));
        // and only to the reference view
        assert!(!m.pair(2, 0, 1, 3));
    }

    #[test]
    fn diagonal_and_symmetric_parts() {
        let m = build_mask(5, 2).unwrap();
        let n = m.n_slots();
        for a in 0..n {
            assert!(m.allows(a, a));
        }
        for vi in 0..5 {
            for ti in 0..4 {
                for vj in 0..5 {
                    for tj in 0..4 {
                        if m.intra(vi, ti, vj, tj) {
                            assert!(m.pair(vi, ti, vj, tj) && m.pair(vj, tj, vi, ti));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn cross_half_once_per_target_slot() {
        let (nv, f) = (4, 3);
        let m = build_mask(nv, f).unwrap();
        for vi in 0..nv {
            for ti in 0..f {
                let hits = (0..nv)
                    .flat_map(|vj| (0..2 * f).map(move |tj| (vj, tj)))
                    .filter(|&(vj, tj)| tj == ti + f && vj == 0 && m.pair(vi, ti, vj, tj))
                    .count();
                assert_eq!(hits, 1);
            }
        }
        // view 0 already reaches its own condition slots through the view rule
        assert_eq!(m.cross_half_edges(), (nv - 1) * f);
    }

    #[test]
    fn density_examples() {
        assert_eq!(mask_density(6, 2), Ratio::new(9, 24));
        assert_eq!(*mask_density(6, 2).numer() as f64 / *mask_density(6, 2).denom() as f64, 0.375);
        for f in 1..6 {
            assert_eq!(mask_density(1, f), Ratio::from_integer(1));
        }
    }

    #[test]
    fn brute_force_count_matches_formula() {
        let m = build_mask(3, 2).unwrap();
        let n = m.n_slots();
        let mut count = 0;
        for vi in 0..3 {
            for ti in 0..4 {
                for vj in 0..3 {
                    for tj in 0..4 {
                        if vi == vj || ti == tj {
                            count += 1;
                        }
                    }
                }
            }
        }
        assert_eq!(count, m.intra_count());
        assert_eq!(Ratio::new(count as u64, (n * n) as u64), mask_density(3, 2));
    }

    #[test]
    fn report_fields() {
        let r = build_mask(6, 2).unwrap().report();
        assert_eq!(r.formula_density, 0.375);
        assert_eq!(r.measured_density, 0.375);
        assert_eq!(r.cross_half_edges, 10);
        assert!(r.measured_density_with_cross_half > r.measured_density);
    }

    #[test]
    fn pbm_layout() {
        let pbm = build_mask(2, 1).unwrap().to_pbm();
        let lines: Vec<&str> = pbm.lines().collect();
        assert_eq!(lines[0], "P1");
        assert_eq!(lines[1], "4 4");
        // slot order: (0,0) (0,1) (1,0) (1,1); row for (1,0) reaches (0,1)
        assert_eq!(lines[4], "1 1 1 1");
        assert_eq!(lines[2], "1 1 1 0");
    }

    #[test]
    fn zero_sizes_rejected() {
        assert!(build_mask(0, 2).is_err());
        assert!(build_mask(2, 0).is_err());
    }
}
