//! Areal adjacency graphs: validation, Laplacian and degree matrices, cached
//! spectra and the scaling constant that gives the ICAR covariance a unit
//! geometric-mean marginal variance.

use std::collections::{BTreeSet, VecDeque};
use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linalg::SymSparse;

/// Relative cut-off under which a Laplacian eigenvalue counts as zero.
pub const NULL_EIGEN_RTOL: f64 = 1e-10;

/// Connected, loop-free, undirected graph on `0..n` with binary weights.
#[derive(Debug)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    spectrum: OnceLock<Spectrum>,
}

impl Clone for Graph {
    fn clone(&self) -> Self {
        let spectrum = OnceLock::new();
        if let Some(s) = self.spectrum.get() {
            let _ = spectrum.set(s.clone());
        }
        Self {
            n: self.n,
            edges: self.edges.clone(),
            neighbors: self.neighbors.clone(),
            spectrum,
        }
    }
}

/// Eigen-decompositions derived from a graph.
#[derive(Debug, Clone)]
pub struct Spectrum {
    /// Eigenvalues of `L = D − W`, ascending; the first is exactly zero.
    pub laplacian_eigs: Vec<f64>,
    /// Orthonormal eigenvectors of `L`, one per column, aligned with `laplacian_eigs`.
    pub laplacian_vecs: DMatrix<f64>,
    /// Eigenvalues of `D⁻¹W`, descending; the first is exactly one.
    pub rowstoch_eigs: Vec<f64>,
    /// Orthonormal eigenvectors of the similar matrix `D^{-1/2} W D^{-1/2}`.
    pub rowstoch_vecs: DMatrix<f64>,
    /// Factor `c` with `L_s = c L`.
    pub scale: f64,
    /// Eigenvalues of `L_s⁺`, aligned with `laplacian_eigs` (zero on the null space).
    pub scaled_eigs: Vec<f64>,
}

impl Graph {
    /// Validates and builds a graph. Duplicate edges (in either orientation)
    /// collapse to one.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            for v in [a, b] {
                if v >= n {
                    return Err(Error::NodeOutOfRange { node: v, n });
                }
            }
            if a == b {
                return Err(Error::SelfLoop(a));
            }
            set.insert((a.min(b), a.max(b)));
        }
        let edges: Vec<(usize, usize)> = set.into_iter().collect();
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in &edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for nb in &mut neighbors {
            nb.sort_unstable();
        }
        if let Some(isolated) = (0..n).find(|&i| neighbors[i].is_empty()) {
            return Err(Error::IsolatedNode(isolated));
        }
        let components = connected_components(&neighbors);
        if components.len() > 1 {
            return Err(Error::Disconnected(components));
        }
        Ok(Self {
            n,
            edges,
            neighbors,
            spectrum: OnceLock::new(),
        })
    }

    /// Rook-contiguity lattice with `rows × cols` cells, numbered row-major.
    pub fn lattice(rows: usize, cols: usize) -> Result<Self> {
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let i = r * cols + c;
                if c + 1 < cols {
                    edges.push((i, i + 1));
                }
                if r + 1 < rows {
                    edges.push((i, i + cols));
                }
            }
        }
        Self::new(rows * cols, edges)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Unique edges `(a, b)` with `a < b`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degrees(&self) -> Vec<f64> {
        self.neighbors.iter().map(|nb| nb.len() as f64).collect()
    }

    pub fn adjacency_dense(&self) -> DMatrix<f64> {
        let mut w = DMatrix::zeros(self.n, self.n);
        for &(a, b) in &self.edges {
            w[(a, b)] = 1.0;
            w[(b, a)] = 1.0;
        }
        w
    }

    pub fn degree_dense(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_vec(self.degrees()))
    }

    /// `D − ρ W` as a sparse matrix; `ρ = 1` gives the Laplacian.
    pub fn degree_minus_scaled_adjacency(&self, rho: f64) -> SymSparse {
        let diag = self
            .neighbors
            .iter()
            .enumerate()
            .map(|(i, nb)| (i, i, nb.len() as f64));
        let off = self.edges.iter().map(|&(a, b)| (b, a, -rho));
        SymSparse::from_triplets(self.n, diag.chain(off))
    }

    pub fn laplacian(&self) -> SymSparse {
        self.degree_minus_scaled_adjacency(1.0)
    }

    /// Eigen-decompositions, computed on first use and cached.
    pub fn spectrum(&self) -> Result<&Spectrum> {
        if let Some(s) = self.spectrum.get() {
            return Ok(s);
        }
        let s = compute_spectrum(self)?;
        Ok(self.spectrum.get_or_init(|| s))
    }

    /// Returns `(L_s, c)` with `L_s = c L` and the geometric mean of
    /// `diag(L_s⁺)` equal to one.
    pub fn scaled_laplacian(&self) -> Result<(SymSparse, f64)> {
        let c = self.spectrum()?.scale;
        Ok((self.laplacian().scaled(c), c))
    }

    /// Moore–Penrose pseudoinverse of `L`, dense, from the cached spectrum.
    pub fn laplacian_pinv(&self) -> Result<DMatrix<f64>> {
        let s = self.spectrum()?;
        let mut out = DMatrix::zeros(self.n, self.n);
        for (k, &l) in s.laplacian_eigs.iter().enumerate().skip(1) {
            let v = s.laplacian_vecs.column(k);
            out += (v * v.transpose()) / l;
        }
        Ok(out)
    }

    /// Reads an edge list (`i j` per line, 0-based, `#` comments) or, for a
    /// `.csv` path, a symmetric 0/1 adjacency matrix. `n` overrides the node
    /// count inferred from the file.
    pub fn from_path(path: impl AsRef<Path>, n: Option<usize>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_csv = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        let (inferred, edges) = if is_csv {
            parse_adjacency_matrix(&text, &path.display().to_string())?
        } else {
            parse_edge_list(&text, &path.display().to_string())?
        };
        Self::new(n.unwrap_or(inferred), edges)
    }

    /// Edge-list text in the format read by [`Graph::from_path`].
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("# {} nodes, {} edges\n", self.n, self.edges.len());
        for &(a, b) in &self.edges {
            out.push_str(&format!("{a} {b}\n"));
        }
        out
    }
}

fn connected_components(neighbors: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let n = neighbors.len();
    let mut seen = vec![false; n];
    let mut components = Vec::new();
    for root in 0..n {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        let mut comp = vec![];
        let mut queue = VecDeque::from([root]);
        while let Some(v) = queue.pop_front() {
            comp.push(v);
            for &u in &neighbors[v] {
                if !seen[u] {
                    seen[u] = true;
                    queue.push_back(u);
                }
            }
        }
        comp.sort_unstable();
        components.push(comp);
    }
    components
}

/// Parses `i j` lines; returns the inferred node count and the edges.
pub fn parse_edge_list(text: &str, origin: &str) -> Result<(usize, Vec<(usize, usize)>)> {
    let mut edges = Vec::new();
    let mut max_node = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .collect();
        let parse_err = |msg: String| Error::Parse {
            path: origin.to_string(),
            line: lineno + 1,
            msg,
        };
        if fields.len() != 2 {
            return Err(parse_err(format!("expected two node indices, got {line:?}")));
        }
        let a: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(format!("invalid node index {:?}", fields[0])))?;
        let b: usize = fields[1]
            .parse()
            .map_err(|_| parse_err(format!("invalid node index {:?}", fields[1])))?;
        max_node = Some(max_node.unwrap_or(0).max(a).max(b));
        edges.push((a, b));
    }
    Ok((max_node.map_or(0, |m| m + 1), edges))
}

/// Parses a square symmetric 0/1 matrix; a non-numeric first row is taken as
/// a header and skipped.
pub fn parse_adjacency_matrix(text: &str, origin: &str) -> Result<(usize, Vec<(usize, usize)>)> {
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|s| s.trim().parse::<f64>()).collect();
        match parsed {
            Ok(v) => rows.push((lineno + 1, v)),
            Err(_) if rows.is_empty() => continue,
            Err(_) => {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line: lineno + 1,
                    msg: "non-numeric matrix entry".into(),
                })
            }
        }
    }
    let n = rows.len();
    let mut edges = Vec::new();
    for (i, (lineno, row)) in rows.iter().enumerate() {
        if row.len() != n {
            return Err(Error::Parse {
                path: origin.to_string(),
                line: *lineno,
                msg: format!("row has {} entries, expected {n}", row.len()),
            });
        }
        for (j, &v) in row.iter().enumerate() {
            if v != 0.0 && v != 1.0 {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line: *lineno,
                    msg: format!("entry {v} is not 0 or 1"),
                });
            }
            if v != rows[j].1.get(i).copied().unwrap_or(f64::NAN) {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line: *lineno,
                    msg: format!("matrix is not symmetric at ({i}, {j})"),
                });
            }
            if i == j && v != 0.0 {
                return Err(Error::SelfLoop(i));
            }
            if j > i && v == 1.0 {
                edges.push((i, j));
            }
        }
    }
    Ok((n, edges))
}

fn symmetric_eigen(m: DMatrix<f64>, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let n = m.nrows();
    SymmetricEigen::try_new(m, 1e-15, 1000 * n.max(10))
        .ok_or_else(|| Error::Numerical(format!("eigensolver did not converge on {what}")))
}

/// Sorts eigenpairs by eigenvalue; `descending` flips the order.
fn sorted_pairs(eig: SymmetricEigen<f64, nalgebra::Dyn>, descending: bool) -> (Vec<f64>, DMatrix<f64>) {
    let n = eig.eigenvalues.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    if descending {
        idx.reverse();
    }
    let values = idx.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vecs = DMatrix::zeros(n, n);
    for (dst, &src) in idx.iter().enumerate() {
        vecs.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vecs)
}

fn compute_spectrum(g: &Graph) -> Result<Spectrum> {
    let n = g.n;
    let (mut ell, lvecs) = sorted_pairs(symmetric_eigen(g.laplacian().to_dense(), "graph Laplacian")?, false);
    let ell_max = ell.last().copied().unwrap_or(0.0);
    let nulls = ell
        .iter()
        .filter(|&&l| l.abs() <= NULL_EIGEN_RTOL * ell_max)
        .count();
    if nulls != 1 {
        return Err(Error::Numerical(format!(
            "expected exactly one null Laplacian eigenvalue, found {nulls}"
        )));
    }
    ell[0] = 0.0;

    let inv_sqrt_deg: Vec<f64> = g.degrees().iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut sym = g.adjacency_dense();
    for i in 0..n {
        for j in 0..n {
            sym[(i, j)] *= inv_sqrt_deg[i] * inv_sqrt_deg[j];
        }
    }
    let (mut delta, dvecs) = sorted_pairs(symmetric_eigen(sym, "normalised adjacency")?, true);
    for d in &mut delta {
        *d = d.clamp(-1.0, 1.0);
    }
    delta[0] = 1.0;

    // diag(L⁺) from the non-null eigenpairs
    let mut diag_pinv = vec![0.0; n];
    for (k, &l) in ell.iter().enumerate().skip(1) {
        for (i, d) in diag_pinv.iter_mut().enumerate() {
            *d += lvecs[(i, k)].powi(2) / l;
        }
    }
    let scale = (diag_pinv.iter().map(|d| d.ln()).sum::<f64>() / n as f64).exp();
    let scaled_eigs = ell
        .iter()
        .map(|&l| if l == 0.0 { 0.0 } else { 1.0 / (scale * l) })
        .collect();

    Ok(Spectrum {
        laplacian_eigs: ell,
        laplacian_vecs: lvecs,
        rowstoch_eigs: delta,
        rowstoch_vecs: dvecs,
        scale,
        scaled_eigs,
    })
}
