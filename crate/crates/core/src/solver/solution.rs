use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrals::RandomField;
use crate::norms::ProcessSample;
use crate::randomness::{MarkSpace, PathSample, ScenarioTree, TimeGrid};

/// Solution values on a contiguous block of grid indices.
///
/// Each inner vector is indexed by unit: a lattice node at that depth, or a
/// path. `y` covers nodes `first..=first+len`; `z`, `v` and the driver values
/// `f` cover the steps in between, `z` and `v` being unit-major with widths
/// `d` and `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Fields {
    pub first: usize,
    pub y: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub f: Vec<Vec<f64>>,
}

impl Fields {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    /// Joins consecutive blocks given in time order.
    pub(crate) fn concat(blocks: Vec<Fields>) -> Fields {
        let mut out = Fields { first: blocks.first().map_or(0, |b| b.first), y: Vec::new(), z: Vec::new(), v: Vec::new(), f: Vec::new() };
        let count = blocks.len();
        for (i, mut b) in blocks.into_iter().enumerate() {
            if i + 1 < count {
                b.y.pop();
            }
            out.y.extend(b.y);
            out.z.extend(b.z);
            out.v.extend(b.v);
            out.f.extend(b.f);
        }
        out
    }
}

/// Where the solution lives: on lattice nodes or along simulated paths.
#[derive(Debug, Clone)]
pub enum Backend {
    Tree(Arc<ScenarioTree>),
    Paths(Arc<PathSample>),
}

/// How tree solutions are turned into path samples for norms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ViewConfig {
    /// Enumerate every scenario when there are at most this many.
    pub enumerate_limit: usize,
    /// Otherwise draw this many scenarios from the lattice law.
    pub sample_paths: usize,
    pub seed: u64,
}

impl Default for ViewConfig {
    fn default() -> Self {
        ViewConfig { enumerate_limit: 1 << 16, sample_paths: 20_000, seed: 0 }
    }
}

impl ViewConfig {
    pub fn view(&self, tree: &ScenarioTree) -> Result<PathSample> {
        if tree.scenario_count() <= self.enumerate_limit as u128 {
            tree.enumerate_paths(self.enumerate_limit)
        } else {
            tree.sample_paths(self.sample_paths, self.seed)
        }
    }
}

/// A solved `(Y, Z, V)` together with the driver values used in each step.
#[derive(Debug, Clone)]
pub struct Solution {
    pub fingerprint: String,
    pub grid: TimeGrid,
    pub dim: usize,
    pub marks: MarkSpace,
    pub y0: f64,
    /// Standard error of `y0` (zero on the lattice).
    pub y0_se: f64,
    pub backend: Backend,
    pub fields: Fields,
}

/// A solution read along a set of paths.
#[derive(Debug, Clone)]
pub struct PathSolution {
    pub y: ProcessSample,
    pub z: ProcessSample,
    pub v: RandomField,
    /// Driver value used on each step, `n_times = N`.
    pub f: ProcessSample,
}

impl Solution {
    pub fn representation(&self) -> &'static str {
        match self.backend {
            Backend::Tree(_) => "tree",
            Backend::Paths(_) => "paths",
        }
    }

    pub fn tree(&self) -> Option<&ScenarioTree> {
        match &self.backend {
            Backend::Tree(t) => Some(t),
            Backend::Paths(_) => None,
        }
    }

    /// Paths on which norms of this solution are evaluated: the simulated
    /// sample itself, or a lattice view.
    pub fn view(&self, cfg: &ViewConfig) -> Result<Arc<PathSample>> {
        match &self.backend {
            Backend::Paths(s) => Ok(s.clone()),
            Backend::Tree(t) => Ok(Arc::new(cfg.view(t)?)),
        }
    }

    /// Unit index of path `p` at grid index `k`.
    pub(crate) fn unit_map(&self, sample: &PathSample) -> Result<UnitMap> {
        match &self.backend {
            Backend::Tree(t) => {
                if sample.nodes.is_none() || sample.grid() != t.grid || sample.batch.dim != t.dim || sample.batch.marks != t.marks {
                    return Err(Error::invalid("lifting a lattice solution needs lattice paths of the same shape"));
                }
                Ok(UnitMap::Nodes)
            }
            Backend::Paths(own) => {
                let same = std::ptr::eq(own.as_ref(), sample) || own.batch == sample.batch;
                if !same {
                    return Err(Error::invalid("a path solution can only be read on its own paths"));
                }
                Ok(UnitMap::Paths)
            }
        }
    }

    /// Reads `Y` along the paths of `sample`.
    pub fn lift_y(&self, sample: &PathSample) -> Result<ProcessSample> {
        let map = self.unit_map(sample)?;
        let y = &self.fields.y;
        ProcessSample::from_fn(self.grid, sample.n_paths(), self.grid.steps + 1, 1, |p, k, out| {
            out[0] = y[k][map.unit(sample, p, k)]
        })?
        .on(sample)
    }

    /// Reads `(Y, Z, V, f)` along the paths of `sample`.
    pub fn lift(&self, sample: &PathSample) -> Result<PathSolution> {
        let map = self.unit_map(sample)?;
        let (n, d, m) = (self.grid.steps, self.dim, self.marks.len());
        let fl = &self.fields;
        let np = sample.n_paths();
        let y = ProcessSample::from_fn(self.grid, np, n + 1, 1, |p, k, out| out[0] = fl.y[k][map.unit(sample, p, k)])?;
        let z = ProcessSample::from_fn(self.grid, np, n, d, |p, k, out| {
            let u = map.unit(sample, p, k);
            out.copy_from_slice(&fl.z[k][u * d..(u + 1) * d]);
        })?;
        let f = ProcessSample::from_fn(self.grid, np, n, 1, |p, k, out| out[0] = fl.f[k][map.unit(sample, p, k)])?;
        let v = RandomField::from_fn(self.grid, &self.marks, np, |p, k, i| fl.v[k][map.unit(sample, p, k) * m + i])?;
        Ok(PathSolution { y: y.on(sample)?, z: z.on(sample)?, v, f: f.on(sample)? })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum UnitMap {
    Nodes,
    Paths,
}

impl UnitMap {
    pub(crate) fn unit(self, sample: &PathSample, path: usize, k: usize) -> usize {
        match self {
            UnitMap::Nodes => sample.node(path, k).expect("lattice paths carry nodes"),
            UnitMap::Paths => path,
        }
    }
}

/// `‖ΔY‖_{𝒮^q}`, `‖ΔZ‖_{ℳ^q}` and `‖ΔV‖_{ℒ^q}` between two solutions on a
/// common block of grid indices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Distances {
    pub y: f64,
    pub z: f64,
    pub v: f64,
}

impl Distances {
    pub fn total(&self) -> f64 {
        self.y + self.z + self.v
    }
}

fn root(x: f64, q: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.powf(1.0 / q)
    }
}

/// Distances between two blocks read through the same unit map. Both blocks
/// must cover the same grid indices.
pub(crate) fn block_distances(
    a: &Fields,
    b: &Fields,
    sample: &PathSample,
    map: UnitMap,
    dim: usize,
    marks: &MarkSpace,
    dt: f64,
    q: f64,
) -> Distances {
    let m = marks.len();
    let lambda = marks.intensities();
    let len = a.len();
    let rows = crate::par::map_range(sample.n_paths(), |p| {
        let mut sup = 0.0f64;
        let (mut zq, mut vq) = (0.0, 0.0);
        for k in 0..=len {
            let u = map.unit(sample, p, a.first + k);
            sup = sup.max((a.y[k][u] - b.y[k][u]).abs());
            if k < len {
                zq += (0..dim).map(|l| (a.z[k][u * dim + l] - b.z[k][u * dim + l]).powi(2)).sum::<f64>() * dt;
                vq += (0..m).map(|i| (a.v[k][u * m + i] - b.v[k][u * m + i]).abs().powf(q) * lambda[i] * dt).sum::<f64>();
            }
        }
        (sup.powf(q), zq.sqrt().powf(q), vq)
    });
    let col = |f: fn(&(f64, f64, f64)) -> f64| -> Vec<f64> { rows.iter().map(f).collect() };
    Distances {
        y: root(sample.mean(&col(|r| r.0)), q),
        z: root(sample.mean(&col(|r| r.1)), q),
        v: root(sample.mean(&col(|r| r.2)), q),
    }
}

/// Distances between two solutions of the same problem shape, read along
/// `sample`.
pub fn solution_distance(a: &Solution, b: &Solution, sample: &PathSample, q: f64) -> Result<Distances> {
    if a.grid != b.grid || a.dim != b.dim || a.marks != b.marks {
        return Err(Error::invalid("solutions have different shapes"));
    }
    let (ma, mb) = (a.unit_map(sample)?, b.unit_map(sample)?);
    if ma != mb {
        let la = a.lift(sample)?;
        let lb = b.lift(sample)?;
        let fa = lifted_fields(&la);
        let fb = lifted_fields(&lb);
        return Ok(block_distances(&fa, &fb, sample, UnitMap::Paths, a.dim, &a.marks, a.grid.dt(), q));
    }
    Ok(block_distances(&a.fields, &b.fields, sample, ma, a.dim, &a.marks, a.grid.dt(), q))
}

fn lifted_fields(s: &PathSolution) -> Fields {
    let (np, n) = (s.y.n_paths, s.y.n_times - 1);
    
    Fields {
        first: 0,
        y: (0..=n).map(|k| (0..np).map(|p| s.y.at(p, k)[0]).collect()).collect(),
        z: (0..n).map(|k| (0..np).flat_map(|p| s.z.at(p, k).to_vec()).collect()).collect(),
        v: (0..n).map(|k| (0..np).flat_map(|p| s.v.at(p, k).to_vec()).collect()).collect(),
        f: (0..n).map(|k| (0..np).map(|p| s.f.at(p, k)[0]).collect()).collect(),
    }
}
