//! Time grids and Gaussian increments.
//!
//! Every path draws from its own ChaCha8 stream: the generator is seeded with
//! the master seed and switched to stream `2·stream_id` for `t ≥ 0` and
//! `2·stream_id + 1` for the independent copy that drives `t < 0`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};

/// Relative slack allowed when snapping times onto a grid.
pub const GRID_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    pub t_start: f64,
    pub t_end: f64,
    pub dt: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    /// Grid on `[t_start, t_end]`; the span must be a whole number of steps.
    pub fn new(t_start: f64, t_end: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::domain(format!("dt must be positive, got {dt}")));
        }
        if !t_start.is_finite() || !t_end.is_finite() || t_end < t_start {
            return Err(Error::domain(format!(
                "invalid time interval [{t_start}, {t_end}]"
            )));
        }
        let n_steps = steps_in(t_end - t_start, dt)?;
        Ok(Self::from_steps(t_start, dt, n_steps))
    }

    pub fn from_steps(t_start: f64, dt: f64, n_steps: usize) -> Self {
        Self {
            t_start,
            t_end: t_start + n_steps as f64 * dt,
            dt,
            n_steps,
        }
    }

    pub fn time(&self, n: usize) -> f64 {
        self.t_start + n as f64 * self.dt
    }

    /// Index of the grid node at time `t`.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        if t < self.t_start - GRID_TOL * self.dt || t > self.t_end + GRID_TOL * self.dt {
            return Err(Error::domain(format!(
                "time {t} outside the grid [{}, {}]",
                self.t_start, self.t_end
            )));
        }
        steps_in((t - self.t_start).max(0.0), self.dt)
    }
}

/// Number of steps of size `dt` in `span`; errors unless it is a whole number.
pub fn steps_in(span: f64, dt: f64) -> Result<usize> {
    let ratio = span / dt;
    let n = ratio.round();
    if (ratio - n).abs() > GRID_TOL * n.max(1.0) {
        return Err(Error::domain(format!(
            "span {span} is not a multiple of dt = {dt}"
        )));
    }
    Ok(n as usize)
}

/// Signed index `k` of the time `k·dt`; errors unless `t` is a grid point.
pub fn cell_index(t: f64, dt: f64) -> Result<i64> {
    let n = steps_in(t.abs(), dt)? as i64;
    Ok(if t < 0.0 { -n } else { n })
}

pub(crate) fn stream_rng(seed: u64, stream_id: u64, negative_side: bool) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((stream_id << 1) | negative_side as u64);
    rng
}

/// Fills `out` with independent `N(0, dt)` draws.
pub(crate) fn fill_increments(rng: &mut ChaCha8Rng, dt: f64, out: &mut [f64]) {
    let scale = dt.sqrt();
    for v in out.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v = scale * z;
    }
}

/// Borrowed run of consecutive increments, `n_steps × m` row-major.
#[derive(Debug, Clone, Copy)]
pub struct IncrementsView<'a> {
    pub grid: TimeGrid,
    pub m: usize,
    pub data: &'a [f64],
}

impl<'a> IncrementsView<'a> {
    pub fn row(&self, n: usize) -> &'a [f64] {
        &self.data[n * self.m..(n + 1) * self.m]
    }

    /// Increments of steps `from..to`, on the corresponding sub-grid.
    pub fn slice(&self, from: usize, to: usize) -> Result<IncrementsView<'a>> {
        if from > to || to > self.grid.n_steps {
            return Err(Error::domain(format!(
                "step range {from}..{to} outside 0..{}",
                self.grid.n_steps
            )));
        }
        Ok(IncrementsView {
            grid: TimeGrid::from_steps(self.grid.time(from), self.grid.dt, to - from),
            m: self.m,
            data: &self.data[from * self.m..to * self.m],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WienerIncrements {
    pub grid: TimeGrid,
    pub m: usize,
    pub increments: Vec<f64>,
    pub seed: u64,
    pub stream_id: u64,
}

impl WienerIncrements {
    pub fn view(&self) -> IncrementsView<'_> {
        IncrementsView {
            grid: self.grid,
            m: self.m,
            data: &self.increments,
        }
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.increments[n * self.m..(n + 1) * self.m]
    }

    pub fn slice(&self, from: usize, to: usize) -> Result<IncrementsView<'_>> {
        self.view().slice(from, to)
    }
}

/// Increments of an `m`-dimensional Wiener process on `grid`.
pub fn wiener(m: usize, grid: TimeGrid, seed: u64, stream_id: u64) -> Result<WienerIncrements> {
    if m == 0 {
        return Err(Error::domain("noise dimension must be positive"));
    }
    let mut rng = stream_rng(seed, stream_id, false);
    let mut increments = vec![0.0; grid.n_steps * m];
    fill_increments(&mut rng, grid.dt, &mut increments);
    Ok(WienerIncrements {
        grid,
        m,
        increments,
        seed,
        stream_id,
    })
}

/// Increments of one two-sided path, on `grid_neg` (ending at 0) and
/// `grid_pos` (starting at 0). The two halves come from independent streams.
pub fn wiener_two_sided(
    m: usize,
    grid_neg: TimeGrid,
    grid_pos: TimeGrid,
    seed: u64,
    stream_id: u64,
) -> Result<(WienerIncrements, WienerIncrements)> {
    if grid_neg.t_end.abs() > GRID_TOL * grid_neg.dt
        || grid_pos.t_start.abs() > GRID_TOL * grid_pos.dt
    {
        return Err(Error::domain("two-sided grids must meet at t = 0"));
    }
    if grid_neg.dt != grid_pos.dt {
        return Err(Error::domain("two-sided grids must share dt"));
    }
    let mut noise = TwoSidedNoise::new(m, grid_pos.dt, seed, stream_id)?;
    noise.ensure(-(grid_neg.n_steps as i64), grid_pos.n_steps as i64);
    let neg = noise.window(-(grid_neg.n_steps as i64), 0)?;
    let pos = noise.window(0, grid_pos.n_steps as i64)?;
    Ok((
        WienerIncrements {
            grid: TimeGrid::from_steps(
                -(grid_neg.n_steps as f64) * grid_neg.dt,
                grid_neg.dt,
                grid_neg.n_steps,
            ),
            m,
            increments: neg.data.to_vec(),
            seed,
            stream_id,
        },
        WienerIncrements {
            grid: grid_pos,
            m,
            increments: pos.data.to_vec(),
            seed,
            stream_id,
        },
    ))
}

/// One realization of a two-sided Wiener process on the lattice `k·dt`,
/// `k ∈ ℤ`, extended on demand.
///
/// Cell `k` is `[k·dt, (k+1)·dt]`. For `k ≥ 0` its increment is the `k`-th
/// draw of the forward stream; for `k < 0` it is minus the `(−k−1)`-th draw
/// of the backward stream, i.e. `w(t) = ŵ(−t)` for `t < 0`. Extending the
/// lattice never changes cells already drawn, so nested windows agree.
#[derive(Debug, Clone)]
pub struct TwoSidedNoise {
    m: usize,
    dt: f64,
    seed: u64,
    stream_id: u64,
    rng_pos: ChaCha8Rng,
    rng_neg: ChaCha8Rng,
    pos: Vec<f64>,
    // Backward-stream draws in draw order: row `j` belongs to cell `−j−1`.
    neg_rev: Vec<f64>,
    // Negated rows of `neg_rev` in increasing time.
    neg_fwd: Vec<f64>,
}

impl TwoSidedNoise {
    pub fn new(m: usize, dt: f64, seed: u64, stream_id: u64) -> Result<Self> {
        if m == 0 {
            return Err(Error::domain("noise dimension must be positive"));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::domain(format!("dt must be positive, got {dt}")));
        }
        Ok(Self {
            m,
            dt,
            seed,
            stream_id,
            rng_pos: stream_rng(seed, stream_id, false),
            rng_neg: stream_rng(seed, stream_id, true),
            pos: Vec::new(),
            neg_rev: Vec::new(),
            neg_fwd: Vec::new(),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn noise_dim(&self) -> usize {
        self.m
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Makes cells `k_from..k_to` available.
    pub fn ensure(&mut self, k_from: i64, k_to: i64) {
        let m = self.m;
        let need_pos = k_to.max(0) as usize;
        if self.pos.len() < need_pos * m {
            let old = self.pos.len();
            self.pos.resize(need_pos * m, 0.0);
            fill_increments(&mut self.rng_pos, self.dt, &mut self.pos[old..]);
        }
        let need_neg = (-k_from).max(0) as usize;
        let have_neg = self.neg_rev.len() / m;
        if have_neg < need_neg {
            self.neg_rev.resize(need_neg * m, 0.0);
            fill_increments(
                &mut self.rng_neg,
                self.dt,
                &mut self.neg_rev[have_neg * m..],
            );
            self.neg_fwd.clear();
            for j in (0..need_neg).rev() {
                self.neg_fwd
                    .extend(self.neg_rev[j * m..(j + 1) * m].iter().map(|v| -v));
            }
        }
    }

    /// Increments of cells `k_from..k_to`; both sides must already be drawn
    /// and the window must not straddle 0 (use [`Self::for_each_row`] for that).
    pub fn window(&self, k_from: i64, k_to: i64) -> Result<IncrementsView<'_>> {
        let m = self.m;
        let grid = TimeGrid::from_steps(
            k_from as f64 * self.dt,
            self.dt,
            (k_to - k_from).max(0) as usize,
        );
        if k_from > k_to {
            return Err(Error::domain("reversed cell window"));
        }
        let data = if k_from >= 0 {
            self.pos.get(k_from as usize * m..k_to as usize * m)
        } else if k_to <= 0 {
            let n_neg = self.neg_fwd.len() / m;
            let a = n_neg as i64 + k_from;
            let b = n_neg as i64 + k_to;
            if a < 0 {
                None
            } else {
                self.neg_fwd.get(a as usize * m..b as usize * m)
            }
        } else {
            return Err(Error::domain("window straddles t = 0"));
        };
        data.map(|data| IncrementsView { grid, m, data })
            .ok_or_else(|| Error::domain(format!("cells {k_from}..{k_to} have not been drawn")))
    }

    /// Increments of a single cell.
    pub fn cell(&mut self, k: i64) -> &[f64] {
        self.ensure(k, k + 1);
        let m = self.m;
        if k >= 0 {
            &self.pos[k as usize * m..(k as usize + 1) * m]
        } else {
            let n_neg = self.neg_fwd.len() / m;
            let i = (n_neg as i64 + k) as usize;
            &self.neg_fwd[i * m..(i + 1) * m]
        }
    }

    /// Splits `k_from..k_to` into at most two windows that do not straddle 0.
    pub fn windows(&mut self, k_from: i64, k_to: i64) -> Result<Vec<IncrementsView<'_>>> {
        self.ensure(k_from, k_to);
        if k_from < 0 && k_to > 0 {
            Ok(vec![self.window(k_from, 0)?, self.window(0, k_to)?])
        } else {
            Ok(vec![self.window(k_from, k_to)?])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_arithmetic() {
        let g = TimeGrid::new(0.0, 1.0, 1e-4).unwrap();
        assert_eq!(g.n_steps, 10_000);
        assert_eq!(g.index_of(0.5).unwrap(), 5000);
        assert!(TimeGrid::new(0.0, 1.0, 0.3).is_err());
        assert!(TimeGrid::new(0.0, 1.0, 0.0).is_err());
        assert!(g.index_of(2.0).is_err());
        assert_eq!(cell_index(-3.0, 0.5).unwrap(), -6);
    }

    #[test]
    fn increments_are_reproducible_and_centered() {
        let g = TimeGrid::from_steps(0.0, 1e-4, 1_000_000);
        let a = wiener(1, g, 42, 7).unwrap();
        let b = wiener(1, g, 42, 7).unwrap();
        assert_eq!(a, b);
        let n = a.increments.len() as f64;
        let mean = a.increments.iter().sum::<f64>() / n;
        let var = a.increments.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 4.0 * (1e-4f64 / n).sqrt());
        assert!((var / 1e-4 - 1.0).abs() < 4.0 * (2.0 / n).sqrt());
        let c = wiener(1, g, 42, 8).unwrap();
        assert_ne!(a.increments[..10], c.increments[..10]);
    }

    #[test]
    fn two_sided_halves_are_independent() {
        let n = 200_000;
        let neg = TimeGrid::from_steps(-(n as f64) * 1e-3, 1e-3, n);
        let pos = TimeGrid::from_steps(0.0, 1e-3, n);
        let (a, b) = wiener_two_sided(1, neg, pos, 3, 0).unwrap();
        assert_ne!(a.increments, b.increments);
        let dot: f64 = a
            .increments
            .iter()
            .zip(&b.increments)
            .map(|(x, y)| x * y)
            .sum();
        let corr = dot / (n as f64 * 1e-3);
        assert!(corr.abs() < 4.0 / (n as f64).sqrt(), "{corr}");
        // The positive half coincides with the one-sided stream.
        assert_eq!(b, wiener(1, pos, 3, 0).unwrap());
    }

    #[test]
    fn nested_windows_share_cells() {
        let mut shallow = TwoSidedNoise::new(2, 0.1, 9, 4).unwrap();
        shallow.ensure(-10, 5);
        let mut deep = TwoSidedNoise::new(2, 0.1, 9, 4).unwrap();
        deep.ensure(-100, 50);
        let a = shallow.window(-10, 0).unwrap().data.to_vec();
        let b = deep.window(-10, 0).unwrap().data.to_vec();
        assert_eq!(a, b);
        assert_eq!(
            shallow.window(0, 5).unwrap().data,
            deep.window(0, 5).unwrap().data
        );
        // Cell -1 is minus the first draw of the backward stream.
        let mut rng = stream_rng(9, 4, true);
        let mut first = [0.0; 2];
        fill_increments(&mut rng, 0.1, &mut first);
        assert_eq!(deep.cell(-1), &[-first[0], -first[1]]);
        assert!(deep.window(-1, 1).is_err());
        assert_eq!(deep.windows(-3, 2).unwrap().len(), 2);
    }

    #[test]
    fn slices_cover_sub_grids() {
        let w = wiener(2, TimeGrid::from_steps(0.0, 0.01, 100), 1, 0).unwrap();
        let s = w.slice(10, 30).unwrap();
        assert_eq!(s.grid.n_steps, 20);
        assert!((s.grid.t_start - 0.1).abs() < 1e-15);
        assert_eq!(s.row(0), w.row(10));
        assert!(w.slice(30, 200).is_err());
    }
}
