//! The index-2 descriptor system, its file bundle, and synthetic generators.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dense::thin_qr;
use crate::error::{Error, Result};
use crate::mmio;
use crate::oracle;
use crate::sparse::SparseMatrix;

/// Dense SPD and rank checks run only up to this velocity dimension.
pub const VALIDATION_CAP: usize = 500;

const SYMMETRY_TOL: f64 = 1e-12;

/// `M v' = A v + G p + B u`, `Gᵀ v = 0`, `y = C v`.
#[derive(Clone, Debug)]
pub struct DescriptorSystem {
    m: SparseMatrix,
    a: SparseMatrix,
    g: SparseMatrix,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
}

fn invalid(invariant: &'static str, detail: impl Into<String>) -> Error {
    Error::Validation {
        invariant,
        detail: detail.into(),
    }
}

impl DescriptorSystem {
    /// Validates and builds the system. A slightly asymmetric `M` is
    /// replaced by `(M + Mᵀ)/2`.
    pub fn new(m: SparseMatrix, a: SparseMatrix, g: SparseMatrix, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let n_v = m.nrows();
        if m.shape() != (n_v, n_v) {
            return Err(invalid("dimension", format!("M must be square, got {:?}", m.shape())));
        }
        if a.shape() != (n_v, n_v) {
            return Err(invalid(
                "dimension",
                format!("A is {:?}, expected {n_v}x{n_v}", a.shape()),
            ));
        }
        if g.nrows() != n_v {
            return Err(invalid(
                "dimension",
                format!("G has {} rows, expected {n_v}", g.nrows()),
            ));
        }
        if b.nrows() != n_v {
            return Err(invalid(
                "dimension",
                format!("B has {} rows, expected {n_v}", b.nrows()),
            ));
        }
        if c.ncols() != n_v {
            return Err(invalid(
                "dimension",
                format!("C has {} columns, expected {n_v}", c.ncols()),
            ));
        }
        if g.ncols() >= n_v {
            return Err(invalid(
                "dimension",
                format!("need n_p < n_v, got n_p = {} and n_v = {n_v}", g.ncols()),
            ));
        }
        let all_finite = [&m, &a, &g].iter().all(|s| s.values().iter().all(|v| v.is_finite()))
            && b.iter().all(|v| v.is_finite())
            && c.iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(invalid("finite", "matrices contain NaN or infinite entries"));
        }

        let asym = m.asymmetry();
        let mnorm = m.frobenius_norm();
        if asym > SYMMETRY_TOL * mnorm {
            return Err(invalid("symmetry", format!("‖M − Mᵀ‖_F / ‖M‖_F = {:e}", asym / mnorm)));
        }
        let m = if asym > 0.0 {
            m.add_scaled(0.5, &m.transpose(), 0.5)?
        } else {
            m
        };

        for j in 0..n_v {
            if m.get(j, j) <= 0.0 {
                return Err(invalid("SPD", format!("M has nonpositive diagonal entry at {j}")));
            }
        }
        for j in 0..g.ncols() {
            if g.column(j).1.iter().all(|&v| v == 0.0) {
                return Err(invalid("rank", format!("G column {j} is zero")));
            }
        }
        if n_v <= VALIDATION_CAP {
            let eig = SymmetricEigen::new(m.to_dense());
            let lmin = eig.eigenvalues.min();
            if lmin <= 0.0 {
                return Err(invalid("SPD", format!("smallest eigenvalue of M is {lmin:e}")));
            }
            if g.ncols() > 0 {
                if let Err(Error::RankDeficient { column, .. }) = thin_qr(&g.to_dense()) {
                    return Err(invalid("rank", format!("G loses rank at column {column}")));
                }
            }
        }
        Ok(Self { m, a, g, b, c })
    }

    pub fn n_v(&self) -> usize {
        self.m.nrows()
    }

    pub fn n_p(&self) -> usize {
        self.g.ncols()
    }

    pub fn n_b(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_c(&self) -> usize {
        self.c.nrows()
    }

    pub fn m(&self) -> &SparseMatrix {
        &self.m
    }

    pub fn a(&self) -> &SparseMatrix {
        &self.a
    }

    pub fn g(&self) -> &SparseMatrix {
        &self.g
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    /// Same system with a different input map.
    pub fn with_input(&self, b: DMatrix<f64>) -> Result<Self> {
        Self::new(self.m.clone(), self.a.clone(), self.g.clone(), b, self.c.clone())
    }

    /// Same system with a different output map.
    pub fn with_output(&self, c: DMatrix<f64>) -> Result<Self> {
        Self::new(self.m.clone(), self.a.clone(), self.g.clone(), self.b.clone(), c)
    }

    /// Same system with a different system matrix.
    pub fn with_system_matrix(&self, a: SparseMatrix) -> Result<Self> {
        Self::new(self.m.clone(), a, self.g.clone(), self.b.clone(), self.c.clone())
    }
}

/// File locations of one bundle.
#[derive(Clone, Debug)]
pub struct SystemPaths {
    pub m: PathBuf,
    pub a: PathBuf,
    pub g: PathBuf,
    pub b: PathBuf,
    pub c: PathBuf,
}

pub const MANIFEST_NAME: &str = "system.toml";

pub fn load_system_files(paths: &SystemPaths) -> Result<DescriptorSystem> {
    DescriptorSystem::new(
        mmio::read_sparse(&paths.m)?,
        mmio::read_sparse(&paths.a)?,
        mmio::read_sparse(&paths.g)?,
        mmio::read_dense(&paths.b)?,
        mmio::read_dense(&paths.c)?,
    )
}

/// Loads a bundle from its manifest (or from a directory holding `system.toml`).
pub fn load_system(path: &Path) -> Result<DescriptorSystem> {
    let manifest = if path.is_dir() {
        path.join(MANIFEST_NAME)
    } else {
        path.to_path_buf()
    };
    let base = manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
    let text = std::fs::read_to_string(&manifest)?;
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Parse(format!("{}: {}", manifest.display(), e.message())))?;
    let file = |key: &str| -> Result<PathBuf> {
        let v = table
            .get(key)
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::Parse(format!("manifest lacks string key {key}")))?;
        Ok(base.join(v))
    };
    let paths = SystemPaths {
        m: file("M")?,
        a: file("A")?,
        g: file("G")?,
        b: file("B")?,
        c: file("C")?,
    };
    let sys = load_system_files(&paths)?;
    for (key, actual) in [("n_v", sys.n_v()), ("n_p", sys.n_p())] {
        if let Some(v) = table.get(key) {
            let declared = v
                .as_integer()
                .ok_or_else(|| Error::Parse(format!("manifest key {key} must be an integer")))?;
            if declared != actual as i64 {
                return Err(invalid(
                    "dimension",
                    format!("manifest declares {key} = {declared}, matrices give {actual}"),
                ));
            }
        }
    }
    Ok(sys)
}

/// Writes `M.mtx`, `A.mtx`, `G.mtx`, `B.mtx`, `C.mtx` and the manifest into `dir`.
pub fn write_system(sys: &DescriptorSystem, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    mmio::write_sparse(&dir.join("M.mtx"), sys.m())?;
    mmio::write_sparse(&dir.join("A.mtx"), sys.a())?;
    mmio::write_sparse(&dir.join("G.mtx"), sys.g())?;
    mmio::write_dense(&dir.join("B.mtx"), sys.b())?;
    mmio::write_dense(&dir.join("C.mtx"), sys.c())?;
    let manifest = format!(
        "M = \"M.mtx\"\nA = \"A.mtx\"\nG = \"G.mtx\"\nB = \"B.mtx\"\nC = \"C.mtx\"\nn_v = {}\nn_p = {}\n",
        sys.n_v(),
        sys.n_p()
    );
    let path = dir.join(MANIFEST_NAME);
    std::fs::write(&path, manifest)?;
    Ok(path)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Stability {
    Stable,
    /// `count` finite eigenvalues with real part at least `shift > 0`.
    Unstable {
        count: usize,
        shift: f64,
    },
}

/// Staggered (MAC) grid on the unit square with `cells` cells per side:
/// `n_v = 2N(N−1)`, `n_p = N² − 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub cells: usize,
    pub viscosity: f64,
    /// Strength of the constant transport field.
    pub convection: f64,
}

impl GridSpec {
    pub fn dims(&self) -> (usize, usize) {
        let n = self.cells;
        (2 * n * (n - 1), n * n - 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n_v: usize,
    pub n_p: usize,
    pub n_b: usize,
    pub n_c: usize,
    pub stability: Stability,
    pub seed: u64,
    pub grid: Option<GridSpec>,
}

impl SyntheticSpec {
    pub fn new(n_v: usize, n_p: usize, n_b: usize, n_c: usize, stability: Stability, seed: u64) -> Self {
        Self {
            n_v,
            n_p,
            n_b,
            n_c,
            stability,
            seed,
            grid: None,
        }
    }

    pub fn on_grid(grid: GridSpec, n_b: usize, n_c: usize, stability: Stability, seed: u64) -> Self {
        let (n_v, n_p) = if grid.cells >= 2 { grid.dims() } else { (0, 0) };
        Self {
            n_v,
            n_p,
            n_b,
            n_c,
            stability,
            seed,
            grid: Some(grid),
        }
    }

    fn check(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InfeasibleSpec(msg));
        if self.n_p >= self.n_v {
            return bad(format!("n_p = {} must be below n_v = {}", self.n_p, self.n_v));
        }
        if self.n_b == 0 || self.n_c == 0 {
            return bad("n_b and n_c must be positive".into());
        }
        if let Stability::Unstable { count, shift } = self.stability {
            if count == 0 || count > self.n_v - self.n_p {
                return bad(format!("unstable count {count} outside 1..={}", self.n_v - self.n_p));
            }
            if !(shift > 0.0 && shift.is_finite()) {
                return bad(format!("unstable shift must be positive, got {shift}"));
            }
        }
        if let Some(grid) = self.grid {
            if grid.cells < 3 {
                return bad("grid needs at least 3 cells per side".into());
            }
            if grid.dims() != (self.n_v, self.n_p) {
                return bad(format!(
                    "grid with {} cells gives (n_v, n_p) = {:?}, spec says ({}, {})",
                    grid.cells,
                    grid.dims(),
                    self.n_v,
                    self.n_p
                ));
            }
            if !(grid.viscosity > 0.0) {
                return bad("grid viscosity must be positive".into());
            }
            if let Stability::Unstable { count, .. } = self.stability {
                let interior = (grid.cells - 1) * (grid.cells - 1);
                if count > interior {
                    return bad(format!("at most {interior} unstable modes fit on this grid"));
                }
            }
        }
        Ok(())
    }
}

/// Deterministic synthetic system with the structure `A = −νL − K` of a
/// linearized flow operator (symmetric dissipative part plus transport).
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<DescriptorSystem> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let parts = match spec.grid {
        Some(grid) => grid_parts(&grid),
        None => random_parts(spec, &mut rng)?,
    };
    let b = unit_columns(spec.n_v, spec.n_b, &mut rng);
    let c = unit_columns(spec.n_v, spec.n_c, &mut rng).transpose();

    let Stability::Unstable { count, shift } = spec.stability else {
        let a = parts.dissipation.add_scaled(1.0, &parts.transport, 1.0)?;
        return DescriptorSystem::new(parts.m, a, parts.g, b, c);
    };

    let w = parts.unstable_directions(count, &mut rng)?;
    let margin = 0.25 + 0.5 * shift;
    let mw = parts.m.mul_dense(&w);
    let wsw = w.transpose() * parts.dissipation.mul_dense(&w);
    let lmin = SymmetricEigen::new((&wsw + wsw.transpose()) * 0.5).eigenvalues.min();
    let delta = shift + margin - lmin;
    let bump = SparseMatrix::from_dense(&(&mw * mw.transpose() * delta));
    let sym = parts.dissipation.add_scaled(1.0, &bump, 1.0)?;

    // The symmetric part alone places exactly `count` eigenvalues above the
    // shift; transport can move them, so it is damped until the count holds.
    let mut strength = 1.0;
    for _ in 0..8 {
        let a = sym.add_scaled(1.0, &parts.transport, strength)?;
        let sys = DescriptorSystem::new(parts.m.clone(), a, parts.g.clone(), b.clone(), c.clone())?;
        if spec.n_v > VALIDATION_CAP || unstable_count_ok(&sys, count, shift)? {
            return Ok(sys);
        }
        strength *= 0.5;
    }
    let a = sym.add_scaled(1.0, &parts.transport, 0.0)?;
    DescriptorSystem::new(parts.m, a, parts.g, b, c)
}

fn unstable_count_ok(sys: &DescriptorSystem, count: usize, shift: f64) -> Result<bool> {
    let eigs = oracle::constrained_spectrum(sys.m(), sys.a(), sys.g())?;
    let above = eigs.iter().filter(|z| z.re >= shift).count();
    let nonneg = eigs.iter().filter(|z| z.re >= 0.0).count();
    Ok(above == count && nonneg == count)
}

fn unit_columns(n: usize, k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut x = DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    for mut col in x.column_iter_mut() {
        let nrm = col.norm();
        col /= nrm;
    }
    x
}

struct Parts {
    m: SparseMatrix,
    /// Symmetric negative definite part of `A`.
    dissipation: SparseMatrix,
    /// Skew-symmetric part of `A`.
    transport: SparseMatrix,
    g: SparseMatrix,
    /// Rows without any entry of `G`, when known.
    free_rows: Vec<usize>,
    grid: Option<GridSpec>,
}

impl Parts {
    /// `M`-orthonormal block whose columns satisfy `Gᵀ w = 0`.
    fn unstable_directions(&self, count: usize, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
        let n_v = self.m.nrows();
        let raw = match self.grid {
            Some(grid) => circulation_modes(&grid, count),
            None => {
                let mut w = DMatrix::zeros(n_v, count);
                for (j, &r) in self.free_rows.iter().take(count).enumerate() {
                    w[(r, j)] = 1.0;
                    for &other in self.free_rows.iter().skip(count) {
                        w[(other, j)] = 0.1 * rng.sample::<f64, _>(StandardNormal);
                    }
                }
                w
            }
        };
        let gram = raw.transpose() * self.m.mul_dense(&raw);
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::InfeasibleSpec("unstable directions are linearly dependent".into()))?;
        let linv = chol
            .l()
            .try_inverse()
            .ok_or_else(|| Error::InfeasibleSpec("unstable directions are linearly dependent".into()))?;
        Ok(raw * linv.transpose())
    }
}

/// Random structured matrices: banded mass, Laplacian-like dissipation on a
/// virtual square grid, and a gradient with one pivot row per column.
fn random_parts(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<Parts> {
    let n = spec.n_v;
    let width = (n as f64).sqrt().ceil() as usize;

    let mut mt = Vec::new();
    for i in 0..n {
        mt.push((i, i, 2.0 / 3.0 + 0.1 * rng.random::<f64>()));
        if i + 1 < n {
            let off = 1.0 / 6.0 * (0.5 + 0.5 * rng.random::<f64>());
            mt.push((i, i + 1, off));
            mt.push((i + 1, i, off));
        }
    }
    let m = SparseMatrix::from_triplets(n, n, &mt)?;

    let viscosity = 1.0;
    let damping = 0.1;
    let mut lt = Vec::new();
    let mut kt = Vec::new();
    for i in 0..n {
        lt.push((i, i, -damping));
        for j in [i + 1, i + width] {
            if j >= n || (j == i + 1 && (i + 1) % width == 0) {
                continue;
            }
            let wgt = viscosity * (0.5 + rng.random::<f64>());
            lt.push((i, i, -wgt));
            lt.push((j, j, -wgt));
            lt.push((i, j, wgt));
            lt.push((j, i, wgt));
            let k = 0.5 * (rng.random::<f64>() - 0.5);
            kt.push((i, j, k));
            kt.push((j, i, -k));
        }
    }
    let dissipation = SparseMatrix::from_triplets(n, n, &lt)?;
    let transport = SparseMatrix::from_triplets(n, n, &kt)?;

    let unstable = match spec.stability {
        Stability::Unstable { count, .. } => count,
        Stability::Stable => 0,
    };
    let mut rows: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        rows.swap(i, j);
    }
    let pivots = &rows[..spec.n_p];
    let free_rows = rows[spec.n_p..spec.n_p + unstable].to_vec();
    let shared = &rows[spec.n_p + unstable..];
    let mut gt = Vec::new();
    for (j, &p) in pivots.iter().enumerate() {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        gt.push((p, j, sign * (1.0 + rng.random::<f64>())));
        if !shared.is_empty() {
            for _ in 0..2 {
                let r = shared[rng.random_range(0..shared.len())];
                gt.push((r, j, rng.random::<f64>() - 0.5));
            }
        }
    }
    let g = SparseMatrix::from_triplets(n, spec.n_p, &gt)?;
    Ok(Parts {
        m,
        dissipation,
        transport,
        g,
        free_rows,
        grid: None,
    })
}

struct MacIndex {
    n: usize,
}

impl MacIndex {
    /// x-velocity on the face between cells (i−1, j) and (i, j), 1 ≤ i ≤ N−1.
    fn u(&self, i: usize, j: usize) -> usize {
        (i - 1) * self.n + j
    }

    /// y-velocity on the face between cells (i, j−1) and (i, j), 1 ≤ j ≤ N−1.
    fn v(&self, i: usize, j: usize) -> usize {
        self.n * (self.n - 1) + i * (self.n - 1) + (j - 1)
    }
}

fn grid_parts(grid: &GridSpec) -> Parts {
    let n = grid.cells;
    let (n_v, n_p) = grid.dims();
    let h = 1.0 / n as f64;
    let idx = MacIndex { n };
    let (wind_x, wind_y) = (grid.convection, 0.5 * grid.convection);

    let mut lt = Vec::new();
    let mut kt = Vec::new();
    let mut stencil = |row: usize, nbrs: [Option<usize>; 4]| {
        lt.push((row, row, -4.0 * grid.viscosity / (h * h)));
        for nb in nbrs.iter().flatten() {
            lt.push((row, *nb, grid.viscosity / (h * h)));
        }
        // Central differences of (wind · ∇) with zero wall values: skew by construction.
        let [east, west, north, south] = nbrs;
        for (nb, coef) in [(east, wind_x), (west, -wind_x), (north, wind_y), (south, -wind_y)] {
            if let Some(c) = nb {
                kt.push((row, c, -coef / (2.0 * h)));
            }
        }
    };
    for i in 1..n {
        for j in 0..n {
            let east = (i + 1 < n).then(|| idx.u(i + 1, j));
            let west = (i > 1).then(|| idx.u(i - 1, j));
            let north = (j + 1 < n).then(|| idx.u(i, j + 1));
            let south = (j > 0).then(|| idx.u(i, j - 1));
            stencil(idx.u(i, j), [east, west, north, south]);
        }
    }
    for i in 0..n {
        for j in 1..n {
            let east = (i + 1 < n).then(|| idx.v(i + 1, j));
            let west = (i > 0).then(|| idx.v(i - 1, j));
            let north = (j + 1 < n).then(|| idx.v(i, j + 1));
            let south = (j > 1).then(|| idx.v(i, j - 1));
            stencil(idx.v(i, j), [east, west, north, south]);
        }
    }
    let dissipation = SparseMatrix::from_triplets(n_v, n_v, &lt).expect("grid indices in range");
    let transport = SparseMatrix::from_triplets(n_v, n_v, &kt).expect("grid indices in range");

    // Gradient = −(divergence)ᵀ; the last cell is dropped to remove the constant mode.
    let mut gt = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let cell = i * n + j;
            if cell == n_p {
                continue;
            }
            if i + 1 < n {
                gt.push((idx.u(i + 1, j), cell, -1.0 / h));
            }
            if i > 0 {
                gt.push((idx.u(i, j), cell, 1.0 / h));
            }
            if j + 1 < n {
                gt.push((idx.v(i, j + 1), cell, -1.0 / h));
            }
            if j > 0 {
                gt.push((idx.v(i, j), cell, 1.0 / h));
            }
        }
    }
    let g = SparseMatrix::from_triplets(n_v, n_p, &gt).expect("grid indices in range");
    Parts {
        m: SparseMatrix::identity(n_v),
        dissipation,
        transport,
        g,
        free_rows: Vec::new(),
        grid: Some(*grid),
    }
}

/// Discrete curl of point vortices at interior grid nodes (divergence free).
fn circulation_modes(grid: &GridSpec, count: usize) -> DMatrix<f64> {
    let n = grid.cells;
    let idx = MacIndex { n };
    let (n_v, _) = grid.dims();
    let nodes: Vec<(usize, usize)> = (1..n).flat_map(|i| (1..n).map(move |j| (i, j))).collect();
    // Spread the chosen nodes over the interior.
    let stride = (nodes.len() / count).max(1);
    let mut w = DMatrix::zeros(n_v, count);
    for k in 0..count {
        let (i, j) = nodes[(k * stride + stride / 2).min(nodes.len() - 1)];
        w[(idx.u(i, j - 1), k)] += 1.0;
        w[(idx.u(i, j), k)] -= 1.0;
        w[(idx.v(i - 1, j), k)] -= 1.0;
        w[(idx.v(i, j), k)] += 1.0;
    }
    w
}
