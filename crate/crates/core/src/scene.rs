//! Discrete sub-Riemannian scenes: measured point sets with skew-adjoint
//! vector fields, a sub-Laplacian and a path metric.
//!
//! Built-in scenes are Cayley graphs of finite groups: the cyclic group
//! (circle), Z_n × Z_m (flat torus) and the discrete Heisenberg group.
//! Each generator `a` acts by right translation `T u(g) = u(g·a)`, the field
//! is the centered difference `X = (T − T⁻¹)/2h`, and the sub-Laplacian is
//! `L = Σ (2 − T − T⁻¹)/h²`, written as `Σ E*E` over the one-sided
//! differences `E ∈ {(T − 1)/h√2, (1 − T⁻¹)/h√2}`. Graph scenes take
//! user fields and set `L = −Σ X²`.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_len, invalid, Error, Result};
use crate::sparse::SparseOp;
use crate::speccalc::SpectralData;

/// Relative tolerance for accepting user fields as skew-adjoint.
pub const SKEW_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneKind {
    Circle,
    Torus2,
    Heisenberg,
    Graph,
}

impl SceneKind {
    pub fn name(self) -> &'static str {
        match self {
            SceneKind::Circle => "circle",
            SceneKind::Torus2 => "torus2",
            SceneKind::Heisenberg => "heisenberg",
            SceneKind::Graph => "graph",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "circle" => Some(SceneKind::Circle),
            "torus2" => Some(SceneKind::Torus2),
            "heisenberg" => Some(SceneKind::Heisenberg),
            "graph" => Some(SceneKind::Graph),
            _ => None,
        }
    }
}

/// User-supplied data for a graph scene.
#[derive(Clone, Debug)]
pub struct GraphData {
    pub mu: Vec<f64>,
    pub h: f64,
    pub fields: Vec<Vec<(usize, usize, f64)>>,
    /// Optional factorization `L = Σ E*E`; defaults to the fields.
    pub energy: Option<Vec<Vec<(usize, usize, f64)>>>,
}

#[derive(Clone, Debug)]
pub enum SceneSpec {
    Circle { n: usize, h: Option<f64> },
    Torus2 { nx: usize, ny: usize, h: Option<f64> },
    Heisenberg { nx: usize, ny: usize, nz: usize, h: Option<f64> },
    Graph(GraphData),
}

pub fn build_scene(spec: &SceneSpec) -> Result<Scene> {
    match spec {
        SceneSpec::Circle { n, h } => Scene::circle_with_spacing(*n, h.unwrap_or(circle_spacing(*n))),
        SceneSpec::Torus2 { nx, ny, h } => {
            Scene::torus2_with_spacing(*nx, *ny, h.unwrap_or(circle_spacing(*nx)))
        }
        SceneSpec::Heisenberg { nx, ny, nz, h } => {
            Scene::heisenberg_with_spacing(*nx, *ny, *nz, h.unwrap_or(1.0))
        }
        SceneSpec::Graph(data) => Scene::graph(data.clone()),
    }
}

fn circle_spacing(n: usize) -> f64 {
    2.0 * std::f64::consts::PI / n.max(1) as f64
}

#[derive(Clone, Debug)]
pub struct Scene {
    kind: SceneKind,
    shape: Vec<usize>,
    h: f64,
    mu: Vec<f64>,
    fields: Vec<SparseOp>,
    energy: Vec<SparseOp>,
    laplacian: SparseOp,
    metric: Vec<f64>,
    coords: Vec<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ball {
    pub points: Vec<usize>,
    pub measure: f64,
}

impl Scene {
    /// Circle of circumference 2π with n points.
    pub fn circle(n: usize) -> Result<Self> {
        Self::circle_with_spacing(n, circle_spacing(n))
    }

    pub fn circle_with_spacing(n: usize, h: f64) -> Result<Self> {
        if n < 4 {
            return Err(invalid("n", format!("circle needs n >= 4, got {n}")));
        }
        let shift: Vec<usize> = (0..n).map(|i| (i + 1) % n).collect();
        let coords = (0..n).map(|i| [i as f64 * h, 0.0, 0.0]).collect();
        Self::cayley(SceneKind::Circle, vec![n], h, h, vec![shift], coords)
    }

    pub fn torus2(nx: usize, ny: usize) -> Result<Self> {
        Self::torus2_with_spacing(nx, ny, circle_spacing(nx))
    }

    pub fn torus2_with_spacing(nx: usize, ny: usize, h: f64) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return Err(invalid("sizes", format!("torus2 needs sides >= 3, got {nx}x{ny}")));
        }
        let idx = |x: usize, y: usize| x + nx * y;
        let mut sx = vec![0; nx * ny];
        let mut sy = vec![0; nx * ny];
        let mut coords = vec![[0.0; 3]; nx * ny];
        for y in 0..ny {
            for x in 0..nx {
                sx[idx(x, y)] = idx((x + 1) % nx, y);
                sy[idx(x, y)] = idx(x, (y + 1) % ny);
                coords[idx(x, y)] = [x as f64 * h, y as f64 * h, 0.0];
            }
        }
        Self::cayley(SceneKind::Torus2, vec![nx, ny], h, h * h, vec![sx, sy], coords)
    }

    /// Discrete Heisenberg group on Z_nx × Z_ny × Z_nz with the law
    /// (x,y,z)(x',y',z') = (x+x', y+y', z+z'+xy'). Right translation by the
    /// generators gives X ≈ ∂_x and Y ≈ ∂_y + x∂_z; `nz` must divide `nx` and `ny`.
    pub fn heisenberg(nx: usize, ny: usize, nz: usize) -> Result<Self> {
        Self::heisenberg_with_spacing(nx, ny, nz, 1.0)
    }

    pub fn heisenberg_with_spacing(nx: usize, ny: usize, nz: usize, h: f64) -> Result<Self> {
        if nx < 3 || ny < 3 || nz < 1 {
            return Err(invalid(
                "sizes",
                format!("heisenberg needs nx, ny >= 3 and nz >= 1, got {nx}x{ny}x{nz}"),
            ));
        }
        if nx % nz != 0 || ny % nz != 0 {
            return Err(invalid(
                "sizes",
                format!("heisenberg needs nz to divide nx and ny, got {nx}x{ny}x{nz}"),
            ));
        }
        let n = nx * ny * nz;
        let idx = |x: usize, y: usize, z: usize| x + nx * (y + ny * z);
        let mut sa = vec![0; n];
        let mut sb = vec![0; n];
        let mut coords = vec![[0.0; 3]; n];
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let g = idx(x, y, z);
                    sa[g] = idx((x + 1) % nx, y, z);
                    sb[g] = idx(x, (y + 1) % ny, (z + x) % nz);
                    coords[g] = [x as f64 * h, y as f64 * h, z as f64 * h * h];
                }
            }
        }
        Self::cayley(SceneKind::Heisenberg, vec![nx, ny, nz], h, h.powi(3), vec![sa, sb], coords)
    }

    pub fn graph(data: GraphData) -> Result<Self> {
        let n = data.mu.len();
        if n < 4 {
            return Err(invalid("mu", format!("graph scenes need n >= 4 points, got {n}")));
        }
        if !(data.h > 0.0) {
            return Err(invalid("h", "spacing must be positive"));
        }
        for tr in data.fields.iter().chain(data.energy.iter().flatten()) {
            if let Some(&(r, c, _)) = tr.iter().find(|(r, c, _)| *r >= n || *c >= n) {
                return Err(invalid("fields", format!("entry ({r}, {c}) outside {n} points")));
            }
        }
        let fields: Vec<SparseOp> = data.fields.iter().map(|t| SparseOp::from_triplets(n, t)).collect();
        let energy = data
            .energy
            .as_ref()
            .map(|e| e.iter().map(|t| SparseOp::from_triplets(n, t)).collect());
        let coords = (0..n).map(|i| [i as f64, 0.0, 0.0]).collect();
        Self::from_parts(SceneKind::Graph, vec![n], data.h, data.mu, fields, energy, coords)
    }

    fn cayley(
        kind: SceneKind,
        shape: Vec<usize>,
        h: f64,
        cell: f64,
        shifts: Vec<Vec<usize>>,
        coords: Vec<[f64; 3]>,
    ) -> Result<Self> {
        if !(h > 0.0) {
            return Err(invalid("h", "spacing must be positive"));
        }
        let n = coords.len();
        let mut fields = Vec::new();
        let mut energy = Vec::new();
        let e = 1.0 / (h * std::f64::consts::SQRT_2);
        for s in &shifts {
            let mut inv = vec![0; n];
            for (g, &t) in s.iter().enumerate() {
                inv[t] = g;
            }
            let c = 0.5 / h;
            let x: Vec<_> = (0..n).flat_map(|g| [(g, s[g], c), (g, inv[g], -c)]).collect();
            let fwd: Vec<_> = (0..n).flat_map(|g| [(g, s[g], e), (g, g, -e)]).collect();
            let bwd: Vec<_> = (0..n).flat_map(|g| [(g, g, e), (g, inv[g], -e)]).collect();
            fields.push(SparseOp::from_triplets(n, &x));
            energy.push(SparseOp::from_triplets(n, &fwd));
            energy.push(SparseOp::from_triplets(n, &bwd));
        }
        Self::from_parts(kind, shape, h, vec![cell; n], fields, Some(energy), coords)
    }

    fn from_parts(
        kind: SceneKind,
        shape: Vec<usize>,
        h: f64,
        mu: Vec<f64>,
        fields: Vec<SparseOp>,
        energy: Option<Vec<SparseOp>>,
        coords: Vec<[f64; 3]>,
    ) -> Result<Self> {
        let n = mu.len();
        if let Some(i) = mu.iter().position(|&m| !(m > 0.0 && m.is_finite())) {
            return Err(invalid("mu", format!("weight {i} is {}, must be positive", mu[i])));
        }
        for (k, x) in fields.iter().enumerate() {
            let (row, col, residual, scale) = skew_worst(x, &mu);
            if residual > SKEW_TOL * scale.max(1.0) {
                return Err(Error::NotSkewAdjoint {
                    field: k,
                    row,
                    col,
                    residual,
                });
            }
        }
        let energy = energy.unwrap_or_else(|| fields.clone());
        let laplacian = energy
            .iter()
            .fold(SparseOp::zero(n), |acc, e| acc.add(&e.adjoint(&mu).compose(e)));
        let metric = path_metric(n, &fields, h);
        Ok(Scene {
            kind,
            shape,
            h,
            mu,
            fields,
            energy,
            laplacian,
            metric,
            coords,
        })
    }

    pub fn kind(&self) -> SceneKind {
        self.kind
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn total_measure(&self) -> f64 {
        self.mu.iter().sum()
    }

    pub fn fields(&self) -> &[SparseOp] {
        &self.fields
    }

    pub fn energy_ops(&self) -> &[SparseOp] {
        &self.energy
    }

    pub fn laplacian(&self) -> &SparseOp {
        &self.laplacian
    }

    /// Point coordinates (x, y, z); unused axes are zero.
    pub fn coords(&self) -> &[[f64; 3]] {
        &self.coords
    }

    pub fn distance(&self, x: usize, y: usize) -> f64 {
        self.metric[x * self.len() + y]
    }

    pub fn metric_row(&self, x: usize) -> &[f64] {
        let n = self.len();
        &self.metric[x * n..(x + 1) * n]
    }

    pub fn diameter(&self) -> f64 {
        self.metric.iter().copied().filter(|d| d.is_finite()).fold(0.0, f64::max)
    }

    pub fn is_connected(&self) -> bool {
        self.metric.iter().all(|d| d.is_finite())
    }

    /// Dimension used in Sobolev exponents: topological for the circle and
    /// torus, homogeneous (4) for the Heisenberg group, none for graphs.
    pub fn nominal_dimension(&self) -> Option<f64> {
        match self.kind {
            SceneKind::Circle => Some(1.0),
            SceneKind::Torus2 => Some(2.0),
            SceneKind::Heisenberg => Some(4.0),
            SceneKind::Graph => None,
        }
    }

    pub fn apply_field(&self, k: usize, u: &[f64]) -> Result<Vec<f64>> {
        check_len(self.len(), u)?;
        let x = self
            .fields
            .get(k)
            .ok_or_else(|| invalid("field", format!("scene has {} fields, asked for {k}", self.fields.len())))?;
        Ok(x.apply(u))
    }

    /// Applies the word X_{i1} X_{i2} ... (rightmost first).
    pub fn apply_word(&self, word: &[usize], u: &[f64]) -> Result<Vec<f64>> {
        let mut v = u.to_vec();
        for &k in word.iter().rev() {
            v = self.apply_field(k, &v)?;
        }
        Ok(v)
    }

    pub fn apply_laplacian(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_len(self.len(), u)?;
        Ok(self.laplacian.apply(u))
    }

    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.mu.iter().zip(u).zip(v).map(|((m, a), b)| m * a * b).sum()
    }

    pub fn mean(&self, u: &[f64]) -> f64 {
        self.mu.iter().zip(u).map(|(m, a)| m * a).sum::<f64>() / self.total_measure()
    }

    /// ⟨Lu, u⟩ written as Σ‖E_j u‖² over the energy operators.
    pub fn energy_form(&self, u: &[f64]) -> f64 {
        self.energy
            .iter()
            .map(|e| {
                let v = e.apply(u);
                self.inner(&v, &v)
            })
            .sum()
    }

    /// Pointwise gradient length (Σ_j (E_j u)²)^{1/2}.
    pub fn gradient_magnitude(&self, u: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.len()];
        for e in &self.energy {
            for (a, v) in acc.iter_mut().zip(e.apply(u)) {
                *a += v * v;
            }
        }
        acc.into_iter().map(f64::sqrt).collect()
    }

    /// Carré du champ Γ(u,v) = L(uv) − (Lu)v − u(Lv); equals −2 Σ_j (E_j u)(E_j v)
    /// on the built-in scenes.
    pub fn carre_du_champ(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let uv: Vec<f64> = u.iter().zip(v).map(|(a, b)| a * b).collect();
        let luv = self.laplacian.apply(&uv);
        let lu = self.laplacian.apply(u);
        let lv = self.laplacian.apply(v);
        (0..self.len())
            .map(|i| luv[i] - (lu[i] * v[i] + u[i] * lv[i]))
            .collect()
    }

    /// Frobenius bound on sup |⟨X_k u,v⟩ + ⟨u,X_k v⟩| / (‖u‖‖v‖) for field k.
    pub fn skew_residual(&self, k: usize) -> f64 {
        let x = &self.fields[k];
        let mut sym: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (i, j, v) in x.triplets() {
            let w = self.mu[i] * v;
            *sym.entry((i, j)).or_default() += w;
            *sym.entry((j, i)).or_default() += w;
        }
        sym.iter()
            .map(|(&(i, j), &v)| v * v / (self.mu[i] * self.mu[j]))
            .sum::<f64>()
            .sqrt()
    }

    pub fn ball(&self, x: usize, r: f64) -> Result<Ball> {
        if !(r > 0.0) {
            return Err(invalid("r", format!("radius must be positive, got {r}")));
        }
        if x >= self.len() {
            return Err(invalid("x", format!("point {x} outside scene of {} points", self.len())));
        }
        let points: Vec<usize> = self
            .metric_row(x)
            .iter()
            .enumerate()
            .filter(|(_, &d)| d < r)
            .map(|(y, _)| y)
            .collect();
        let measure = points.iter().map(|&y| self.mu[y]).sum();
        Ok(Ball { points, measure })
    }

    /// Stable digest of the measure, fields and energy operators.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.kind.name().as_bytes());
        hasher.update(self.h.to_le_bytes());
        for m in &self.mu {
            hasher.update(m.to_le_bytes());
        }
        for (tag, ops) in [(b'X', &self.fields), (b'E', &self.energy)] {
            for op in ops {
                hasher.update([tag]);
                for (i, j, v) in op.triplets() {
                    hasher.update((i as u64).to_le_bytes());
                    hasher.update((j as u64).to_le_bytes());
                    hasher.update(v.to_le_bytes());
                }
            }
        }
        hasher
            .finalize()
            .iter()
            .fold(String::new(), |mut s, b| {
                let _ = write!(s, "{b:02x}");
                s
            })
    }

    /// Serializes to the flat text format read by [`Scene::from_text`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "paralab-scene 1");
        let _ = writeln!(s, "kind {}", self.kind.name());
        let shape: Vec<String> = self.shape.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "shape {}", shape.join(" "));
        let _ = writeln!(s, "h {:e}", self.h);
        let _ = writeln!(s, "points {}", self.len());
        let _ = writeln!(s, "mu");
        for m in &self.mu {
            let _ = writeln!(s, "{m:e}");
        }
        for (name, ops) in [("field", &self.fields), ("energy", &self.energy)] {
            for op in ops {
                let t = op.triplets();
                let _ = writeln!(s, "{name} {}", t.len());
                for (i, j, v) in t {
                    let _ = writeln!(s, "{i} {j} {v:e}");
                }
            }
        }
        s
    }

    /// Parses the flat text format. Built-in kinds are rebuilt from `shape`
    /// and `h`; graph scenes are assembled from the listed maps.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let perr = |line: usize, msg: &str| Error::Parse {
            line,
            msg: msg.to_string(),
        };
        let (ln, header) = lines.next().ok_or_else(|| perr(0, "empty scene file"))?;
        if !header.starts_with("paralab-scene") {
            return Err(perr(ln, "expected header `paralab-scene 1`"));
        }
        let mut kind = SceneKind::Graph;
        let mut shape = Vec::new();
        let mut h = 1.0;
        let mut points = None;
        let mut mu = Vec::new();
        let mut fields = Vec::new();
        let mut energy = Vec::new();
        let num = |ln: usize, tok: &str| -> Result<f64> {
            tok.parse::<f64>().map_err(|_| perr(ln, &format!("bad number `{tok}`")))
        };
        let int = |ln: usize, tok: &str| -> Result<usize> {
            tok.parse::<usize>().map_err(|_| perr(ln, &format!("bad integer `{tok}`")))
        };
        while let Some((ln, line)) = lines.next() {
            let mut tok = line.split_whitespace();
            let key = tok.next().unwrap_or("");
            match key {
                "kind" => {
                    let v = tok.next().unwrap_or("");
                    kind = SceneKind::parse(v).ok_or_else(|| perr(ln, &format!("unknown kind `{v}`")))?;
                }
                "shape" => shape = tok.map(|t| int(ln, t)).collect::<Result<_>>()?,
                "h" => h = num(ln, tok.next().unwrap_or(""))?,
                "points" => points = Some(int(ln, tok.next().unwrap_or(""))?),
                "mu" => {
                    let n = points.ok_or_else(|| perr(ln, "`points` must precede `mu`"))?;
                    while mu.len() < n {
                        let (l2, row) = lines.next().ok_or_else(|| perr(ln, "truncated mu block"))?;
                        for t in row.split_whitespace() {
                            mu.push(num(l2, t)?);
                        }
                    }
                    if mu.len() != n {
                        return Err(perr(ln, "mu block length differs from `points`"));
                    }
                }
                "field" | "energy" => {
                    let count = int(ln, tok.next().unwrap_or(""))?;
                    let mut t = Vec::with_capacity(count);
                    for _ in 0..count {
                        let (l2, row) = lines.next().ok_or_else(|| perr(ln, "truncated triplet block"))?;
                        let parts: Vec<&str> = row.split_whitespace().collect();
                        if parts.len() != 3 {
                            return Err(perr(l2, "expected `row col value`"));
                        }
                        t.push((int(l2, parts[0])?, int(l2, parts[1])?, num(l2, parts[2])?));
                    }
                    if key == "field" {
                        fields.push(t);
                    } else {
                        energy.push(t);
                    }
                }
                _ => return Err(perr(ln, &format!("unknown key `{key}`"))),
            }
        }
        let spec = match (kind, shape.as_slice()) {
            (SceneKind::Circle, [n]) => SceneSpec::Circle { n: *n, h: Some(h) },
            (SceneKind::Torus2, [nx, ny]) => SceneSpec::Torus2 { nx: *nx, ny: *ny, h: Some(h) },
            (SceneKind::Heisenberg, [nx, ny, nz]) => SceneSpec::Heisenberg {
                nx: *nx,
                ny: *ny,
                nz: *nz,
                h: Some(h),
            },
            (SceneKind::Graph, _) => SceneSpec::Graph(GraphData {
                mu,
                h,
                fields,
                energy: if energy.is_empty() { None } else { Some(energy) },
            }),
            _ => return Err(perr(0, "shape does not match kind")),
        };
        build_scene(&spec)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Worst entry of M X + (M X)ᵀ and the largest |μ_i X_ij| for scaling.
fn skew_worst(x: &SparseOp, mu: &[f64]) -> (usize, usize, f64, f64) {
    let mut sym: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut scale: f64 = 0.0;
    for (i, j, v) in x.triplets() {
        let w = mu[i] * v;
        scale = scale.max(w.abs());
        *sym.entry((i, j)).or_default() += w;
        *sym.entry((j, i)).or_default() += w;
    }
    let mut worst = (0, 0, 0.0);
    for (&(i, j), &v) in &sym {
        if v.abs() > worst.2 {
            worst = (i, j, v.abs());
        }
    }
    (worst.0, worst.1, worst.2, scale)
}

/// All-pairs shortest path over field couplings, each edge of length h.
fn path_metric(n: usize, fields: &[SparseOp], h: f64) -> Vec<f64> {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for x in fields {
        for (i, j, _) in x.triplets() {
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    let mut metric = vec![f64::INFINITY; n * n];
    let mut hops = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    for s in 0..n {
        hops.iter_mut().for_each(|v| *v = usize::MAX);
        hops[s] = 0;
        queue.push_back(s);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if hops[v] == usize::MAX {
                    hops[v] = hops[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        for (t, &k) in hops.iter().enumerate() {
            if k != usize::MAX {
                metric[s * n + t] = k as f64 * h;
            }
        }
    }
    metric
}

#[derive(Clone, Debug, Serialize)]
pub struct GeometryReport {
    pub doubling_constant: f64,
    pub d_hom: f64,
    pub vol_lower_c: f64,
    pub poincare_constant: f64,
    /// Fitted exponent of μ(B(y,r)) ≤ (1 + d(x,y)/r)^N μ(B(x,r)).
    pub growth_exponent: f64,
    pub radii_tested: Vec<f64>,
    /// Radii at which every ball is a single point.
    pub below_resolution: Vec<f64>,
}

/// Dyadic radii h·2^j up to the diameter.
pub fn dyadic_radii(scene: &Scene) -> Vec<f64> {
    let diam = scene.diameter().max(scene.h());
    let mut r = scene.h();
    let mut out = Vec::new();
    while r <= diam * (1.0 + 1e-12) {
        out.push(r);
        r *= 2.0;
    }
    out
}

/// Probe functions for the Poincaré constant: eigenvectors of the 20 smallest
/// nonzero eigenvalues and 20 seeded Gaussian fields.
pub fn poincare_probes(scene: &Scene, spec: &SpectralData, seed: u64) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let k0 = spec.kernel_dim();
    for i in k0..(k0 + 20).min(scene.len()) {
        out.push(spec.eigenvector(i));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..20 {
        out.push((0..scene.len()).map(|_| StandardNormal.sample(&mut rng)).collect());
    }
    out
}

pub fn geometry_report(scene: &Scene, radii: &[f64], probes: &[Vec<f64>]) -> Result<GeometryReport> {
    let n = scene.len();
    if radii.is_empty() {
        return Err(invalid("radii", "need at least one radius"));
    }
    if let Some(&r) = radii.iter().find(|&&r| !(r > 0.0)) {
        return Err(invalid("radii", format!("radius must be positive, got {r}")));
    }
    for p in probes {
        check_len(n, p)?;
    }
    let ball_measure = |x: usize, r: f64| -> f64 {
        scene
            .metric_row(x)
            .iter()
            .zip(scene.mu())
            .filter(|(&d, _)| d < r)
            .map(|(_, m)| m)
            .sum()
    };
    let mut doubling: f64 = 1.0;
    let mut below = Vec::new();
    let mut vols: Vec<Vec<f64>> = Vec::with_capacity(radii.len());
    for &r in radii {
        let v: Vec<f64> = (0..n).map(|x| ball_measure(x, r)).collect();
        for x in 0..n {
            doubling = doubling.max(ball_measure(x, 2.0 * r) / v[x]);
        }
        if (0..n).all(|x| (v[x] - scene.mu()[x]).abs() <= 1e-14 * v[x]) {
            below.push(r);
        }
        vols.push(v);
    }
    let vol_lower_c = (0..n).map(|x| ball_measure(x, 1.0)).fold(f64::INFINITY, f64::min);

    let mut growth: f64 = 0.0;
    for (ri, &r) in radii.iter().enumerate() {
        let v = &vols[ri];
        for x in 0..n {
            for y in 0..n {
                let d = scene.distance(x, y);
                if x != y && d.is_finite() && v[y] > v[x] {
                    growth = growth.max((v[y] / v[x]).ln() / (1.0 + d / r).ln());
                }
            }
        }
    }

    let grads: Vec<Vec<f64>> = probes.iter().map(|f| scene.gradient_magnitude(f)).collect();
    let mut poincare: f64 = 0.0;
    let mut members = Vec::with_capacity(n);
    for &r in radii {
        for x in 0..n {
            members.clear();
            members.extend((0..n).filter(|&y| scene.distance(x, y) < r));
            if members.len() < 2 {
                continue;
            }
            let mq: f64 = members.iter().map(|&y| scene.mu()[y]).sum();
            for (f, g) in probes.iter().zip(&grads) {
                let fq = members.iter().map(|&y| scene.mu()[y] * f[y]).sum::<f64>() / mq;
                let osc = members.iter().map(|&y| scene.mu()[y] * (f[y] - fq).abs()).sum::<f64>() / mq;
                let grad = members.iter().map(|&y| scene.mu()[y] * g[y]).sum::<f64>() / mq;
                let scale = f.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
                if osc <= 1e-13 * scale {
                    continue;
                }
                poincare = poincare.max(if grad > 0.0 { osc / (r * grad) } else { f64::INFINITY });
            }
        }
    }

    Ok(GeometryReport {
        doubling_constant: doubling,
        d_hom: doubling.log2(),
        vol_lower_c,
        poincare_constant: poincare,
        growth_exponent: growth,
        radii_tested: radii.to_vec(),
        below_resolution: below,
    })
}

/// Uncentered maximal function M_s f(x) = sup_{Q ∋ x} (⨍_Q |f|^s)^{1/s} over
/// every ball realizable on the scene.
pub fn maximal_function(scene: &Scene, f: &[f64], s: f64) -> Result<Vec<f64>> {
    check_len(scene.len(), f)?;
    if !(s > 0.0) {
        return Err(invalid("s", format!("exponent must be positive, got {s}")));
    }
    let n = scene.len();
    let pow: Vec<f64> = f.iter().map(|v| v.abs().powf(s)).collect();
    let mut best = vec![0.0_f64; n];
    let mut order: Vec<usize> = (0..n).collect();
    for c in 0..n {
        let row = scene.metric_row(c);
        order.sort_by(|&a, &b| row[a].total_cmp(&row[b]));
        // Averages of the nested balls, one per distinct finite distance.
        let mut avgs = Vec::new();
        let mut group_of = vec![usize::MAX; n];
        let (mut num, mut den) = (0.0, 0.0);
        let mut i = 0;
        while i < n && row[order[i]].is_finite() {
            let d = row[order[i]];
            while i < n && row[order[i]] == d {
                num += scene.mu()[order[i]] * pow[order[i]];
                den += scene.mu()[order[i]];
                group_of[order[i]] = avgs.len();
                i += 1;
            }
            avgs.push(num / den);
        }
        for k in (0..avgs.len().saturating_sub(1)).rev() {
            avgs[k] = avgs[k].max(avgs[k + 1]);
        }
        for y in 0..n {
            if group_of[y] != usize::MAX {
                best[y] = best[y].max(avgs[group_of[y]]);
            }
        }
    }
    Ok(best.into_iter().map(|v| v.powf(1.0 / s)).collect())
}

/// Dense matrix of a sparse operator in the μ-orthonormal frame, M^{1/2} A M^{-1/2}.
pub(crate) fn symmetric_frame(op: &SparseOp, mu: &[f64]) -> DMatrix<f64> {
    let mut m = op.to_dense();
    let n = mu.len();
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] *= (mu[i] / mu[j]).sqrt();
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_circle(n: usize) -> Scene {
        Scene::circle_with_spacing(n, 1.0).unwrap()
    }

    #[test]
    fn circle_laplacian_is_second_difference() {
        let s = unit_circle(8);
        let l = s.laplacian().to_dense();
        for i in 0..8 {
            assert!((l[(i, i)] - 2.0).abs() < 1e-14);
            assert!((l[(i, (i + 1) % 8)] + 1.0).abs() < 1e-14);
            assert!((l[(i, (i + 7) % 8)] + 1.0).abs() < 1e-14);
            assert_eq!(l.row(i).iter().filter(|v| **v != 0.0).count(), 3);
        }
    }

    #[test]
    fn fields_kill_constants() {
        for s in [unit_circle(8), Scene::torus2(5, 4).unwrap(), Scene::heisenberg(4, 4, 2).unwrap()] {
            let one = vec![1.0; s.len()];
            for k in 0..s.fields().len() {
                assert!(s.apply_field(k, &one).unwrap().iter().all(|v| v.abs() < 1e-14));
            }
            assert!(s.apply_laplacian(&one).unwrap().iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn balls_on_unit_circle() {
        let s = unit_circle(8);
        let b = s.ball(3, 0.5).unwrap();
        assert_eq!(b.points, vec![3]);
        assert_eq!(b.measure, s.mu()[3]);
        assert_eq!(s.ball(0, 1.5).unwrap().points, vec![0, 1, 7]);
        let all = s.ball(0, s.diameter() + 1.0).unwrap();
        assert_eq!(all.points.len(), 8);
        assert!((all.measure - s.total_measure()).abs() < 1e-15);
        assert!(s.ball(0, 0.0).is_err());
    }

    #[test]
    fn metric_axioms_brute_force() {
        for s in [unit_circle(9), Scene::torus2(4, 5).unwrap(), Scene::heisenberg(4, 4, 2).unwrap()] {
            let n = s.len();
            for x in 0..n {
                assert_eq!(s.distance(x, x), 0.0);
                for y in 0..n {
                    assert_eq!(s.distance(x, y), s.distance(y, x));
                    for z in 0..n {
                        assert!(s.distance(x, z) <= s.distance(x, y) + s.distance(y, z) + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_non_skew_graph_with_worst_pair() {
        let mu = vec![1.0; 4];
        let fields = vec![vec![(0, 1, 1.0), (1, 0, -1.0), (2, 3, 1.0), (3, 2, -0.5)]];
        let err = Scene::graph(GraphData { mu, h: 1.0, fields, energy: None }).unwrap_err();
        match err {
            Error::NotSkewAdjoint { field, row, col, residual } => {
                assert_eq!(field, 0);
                assert!((row, col) == (2, 3) || (row, col) == (3, 2));
                assert!((residual - 0.5).abs() < 1e-15);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn weighted_graph_skewness_uses_mu() {
        // μ_0 X_01 = −μ_1 X_10 makes X skew in the weighted product.
        let mu = vec![1.0, 2.0, 1.0, 1.0];
        let fields = vec![vec![(0, 1, 2.0), (1, 0, -1.0), (2, 3, 1.0), (3, 2, -1.0)]];
        let s = Scene::graph(GraphData { mu, h: 1.0, fields, energy: None }).unwrap();
        assert!(s.skew_residual(0) < 1e-15);
        assert!(!s.is_connected());
    }

    #[test]
    fn maximal_function_brute_force() {
        // Oracle: enumerate every (center, radius) ball and take the sup over those containing x.
        let s = Scene::circle(16).unwrap();
        let mut f = vec![0.0; 16];
        f[0] = 1.0 / s.mu()[0];
        let m = maximal_function(&s, &f, 1.0).unwrap();
        let mut brute = vec![0.0_f64; 16];
        for c in 0..16 {
            for k in 0..=8 {
                let r = (k as f64 + 0.5) * s.h();
                let b = s.ball(c, r).unwrap();
                let avg: f64 = b.points.iter().map(|&y| s.mu()[y] * f[y].abs()).sum::<f64>() / b.measure;
                for &y in &b.points {
                    brute[y] = brute[y].max(avg);
                }
            }
        }
        for y in 0..16 {
            assert!((m[y] - brute[y]).abs() < 1e-12 * brute[y].max(1.0));
        }
        // Antipode 8: the best ball is centered at 4 with 9 points reaching both 0 and 8.
        let expected = 1.0 / (9.0 * s.mu()[0]);
        assert!((m[8] - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn maximal_function_constants_and_indicators() {
        let s = Scene::torus2(4, 4).unwrap();
        let m = maximal_function(&s, &vec![-2.5; 16], 1.5).unwrap();
        assert!(m.iter().all(|v| (v - 2.5).abs() < 1e-12));
        let mut ind = vec![0.0; 16];
        ind[5] = 1.0;
        assert!(maximal_function(&s, &ind, 1.0).unwrap().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn text_round_trip() {
        let s = Scene::heisenberg(4, 4, 2).unwrap();
        let back = Scene::from_text(&s.to_text()).unwrap();
        assert_eq!(back.content_hash(), s.content_hash());
        let g = Scene::graph(GraphData {
            mu: vec![1.0, 2.0, 1.0, 1.0],
            h: 0.5,
            fields: vec![vec![(0, 1, 2.0), (1, 0, -1.0), (2, 3, 1.0), (3, 2, -1.0)]],
            energy: None,
        })
        .unwrap();
        let back = Scene::from_text(&g.to_text()).unwrap();
        assert_eq!(back.content_hash(), g.content_hash());
    }

    #[test]
    fn heisenberg_needs_dividing_center() {
        assert!(Scene::heisenberg(6, 6, 4).is_err());
        assert!(Scene::heisenberg(8, 8, 8).is_ok());
    }

    fn arb_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-3.0..3.0f64, n)
    }

    proptest! {
        #[test]
        fn fields_are_skew(u in arb_vec(24), v in arb_vec(24)) {
            let sc = Scene::torus2(6, 4).unwrap();
            for k in 0..2 {
                let xu = sc.apply_field(k, &u).unwrap();
                let xv = sc.apply_field(k, &v).unwrap();
                let nu = sc.inner(&u, &u).sqrt();
                let nv = sc.inner(&v, &v).sqrt();
                prop_assert!((sc.inner(&xu, &v) + sc.inner(&u, &xv)).abs() <= 1e-10 * nu * nv + 1e-300);
            }
        }

        #[test]
        fn quadratic_form_identity(u in arb_vec(32)) {
            let sc = Scene::heisenberg(4, 4, 2).unwrap();
            let lu = sc.apply_laplacian(&u).unwrap();
            let q = sc.inner(&lu, &u);
            prop_assert!((q - sc.energy_form(&u)).abs() <= 1e-10 * q.abs().max(1e-12));
            // The centered fields are dominated by the form.
            let fx: f64 = (0..2).map(|k| { let x = sc.apply_field(k, &u).unwrap(); sc.inner(&x, &x) }).sum();
            prop_assert!(fx <= q * (1.0 + 1e-12) + 1e-12);
        }

        #[test]
        fn maximal_is_monotone(f in arb_vec(12), bump in proptest::collection::vec(0.0..1.0f64, 12)) {
            let sc = Scene::circle(12).unwrap();
            let g: Vec<f64> = f.iter().zip(&bump).map(|(a, b)| a.abs() + b).collect();
            let mf = maximal_function(&sc, &f, 1.0).unwrap();
            let mg = maximal_function(&sc, &g, 1.0).unwrap();
            for (a, b) in mf.iter().zip(&mg) {
                prop_assert!(*a <= *b + 1e-12);
            }
            let sup = f.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            prop_assert!(mf.iter().all(|v| *v <= sup * (1.0 + 1e-12)));
        }

        #[test]
        fn carre_du_champ_is_minus_twice_gradient_pairing(u in arb_vec(10), v in arb_vec(10)) {
            let sc = Scene::circle(10).unwrap();
            let g = sc.carre_du_champ(&u, &v);
            let mut pair = vec![0.0; 10];
            for e in sc.energy_ops() {
                let (eu, ev) = (e.apply(&u), e.apply(&v));
                for i in 0..10 { pair[i] += eu[i] * ev[i]; }
            }
            for i in 0..10 {
                prop_assert!((g[i] + 2.0 * pair[i]).abs() <= 1e-9 * (1.0 + pair[i].abs()));
            }
        }
    }
}
