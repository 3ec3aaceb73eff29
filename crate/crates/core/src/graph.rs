//! Directed topologies and the support pattern of shift operators.
//!
//! An edge `(src, dst)` means `src` sends to `dst`, so it permits the matrix
//! entry `S[dst, src]`. Node indices are 0-based in the API; graph files are
//! 1-based.

use std::collections::{BTreeSet, VecDeque};
use std::fs;
use std::path::Path;

use rand::Rng as _;

use crate::{rng, Error, Matrix, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    n_nodes: usize,
    edges: BTreeSet<(usize, usize)>,
    allow_self_loops: bool,
    in_neighbors: Vec<Vec<usize>>,
}

impl Topology {
    /// Builds a topology from 0-based `(src, dst)` pairs. Duplicates are
    /// merged. A pair `(n, n)` is accepted only when self-loops are allowed,
    /// where it is already implied.
    pub fn new(
        n_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        allow_self_loops: bool,
    ) -> Result<Self> {
        if n_nodes == 0 {
            return Err(Error::EmptyGraph);
        }
        let mut set = BTreeSet::new();
        for (src, dst) in edges {
            for idx in [src, dst] {
                if idx >= n_nodes {
                    return Err(Error::IndexOutOfRange {
                        index: idx + 1,
                        n_nodes,
                    });
                }
            }
            if src == dst {
                if !allow_self_loops {
                    return Err(Error::InvalidInput(format!(
                        "self-loop on node {} but self-loops are disabled",
                        src + 1
                    )));
                }
                continue;
            }
            set.insert((src, dst));
        }
        let mut in_neighbors = vec![Vec::new(); n_nodes];
        for &(src, dst) in &set {
            in_neighbors[dst].push(src);
        }
        for list in &mut in_neighbors {
            list.sort_unstable();
        }
        Ok(Topology {
            n_nodes,
            edges: set,
            allow_self_loops,
            in_neighbors,
        })
    }

    /// Same as [`Topology::new`] with 1-based indices, as used in graph files.
    pub fn from_one_based(
        n_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        allow_self_loops: bool,
    ) -> Result<Self> {
        let mut zero_based = Vec::new();
        for (src, dst) in edges {
            for idx in [src, dst] {
                if idx == 0 || idx > n_nodes {
                    return Err(Error::IndexOutOfRange {
                        index: idx,
                        n_nodes,
                    });
                }
            }
            zero_based.push((src - 1, dst - 1));
        }
        Topology::new(n_nodes, zero_based, allow_self_loops)
    }

    /// Directed Erdős–Rényi graph. In undirected mode each unordered pair is
    /// drawn once and both directions are added together.
    pub fn random_er(n_nodes: usize, p_edge: f64, directed: bool, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_edge) {
            return Err(Error::InvalidInput(format!(
                "edge probability {p_edge} outside [0, 1]"
            )));
        }
        let mut r = rng::rng(seed);
        let mut edges = Vec::new();
        for a in 0..n_nodes {
            for b in 0..n_nodes {
                if a == b || (!directed && b < a) {
                    continue;
                }
                if r.random::<f64>() < p_edge {
                    edges.push((a, b));
                    if !directed {
                        edges.push((b, a));
                    }
                }
            }
        }
        Topology::new(n_nodes, edges, true)
    }

    /// Complete directed graph with self-loops.
    pub fn complete(n_nodes: usize) -> Result<Self> {
        let edges = (0..n_nodes).flat_map(|a| (0..n_nodes).map(move |b| (a, b)));
        Topology::new(n_nodes, edges.filter(|(a, b)| a != b), true)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn allow_self_loops(&self) -> bool {
        self.allow_self_loops
    }

    /// Cross edges `(src, dst)` in lexicographic order; self-loops excluded.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, src: usize, dst: usize) -> bool {
        self.edges.contains(&(src, dst))
    }

    /// Nodes that send to `node`, ascending. Never contains `node` itself.
    pub fn in_neighbors(&self, node: usize) -> &[usize] {
        &self.in_neighbors[node]
    }

    /// Whether a shift matrix may hold a nonzero at `(row, col)`.
    pub fn permits(&self, row: usize, col: usize) -> bool {
        if row == col {
            self.allow_self_loops
        } else {
            self.has_edge(col, row)
        }
    }

    /// Exact support check: every entry outside the support must be `0.0`.
    pub fn respects_support(&self, m: &Matrix) -> bool {
        m.nrows() == self.n_nodes
            && m.ncols() == self.n_nodes
            && (0..self.n_nodes).all(|r| {
                (0..self.n_nodes).all(|c| self.permits(r, c) || m[(r, c)] == 0.0)
            })
    }

    /// Connectivity of the underlying undirected graph.
    pub fn is_connected(&self) -> bool {
        let mut adj = vec![Vec::new(); self.n_nodes];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; self.n_nodes];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = queue.pop_front() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    queue.push_back(w);
                }
            }
        }
        count == self.n_nodes
    }

    /// 0/1 adjacency with `A[dst, src] = 1` per edge (matrix orientation).
    pub fn adjacency(&self) -> Matrix {
        let mut a = Matrix::zeros(self.n_nodes, self.n_nodes);
        for &(src, dst) in &self.edges {
            a[(dst, src)] = 1.0;
        }
        a
    }

    pub fn support_basis(&self) -> SupportBasis {
        let mut pairs = Vec::with_capacity(self.edges.len() + self.n_nodes);
        for row in 0..self.n_nodes {
            // in_neighbors is sorted, so merging the diagonal keeps lexicographic order
            let mut diag_done = !self.allow_self_loops;
            for &col in &self.in_neighbors[row] {
                if !diag_done && row < col {
                    pairs.push((row, row));
                    diag_done = true;
                }
                pairs.push((row, col));
            }
            if !diag_done {
                pairs.push((row, row));
            }
        }
        SupportBasis {
            n_nodes: self.n_nodes,
            pairs,
        }
    }

    /// Parses the text graph format:
    /// `N directed|undirected self_loops=0|1` followed by `src dst` lines.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hline, header) = lines.next().ok_or_else(|| perr(1, "empty graph file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(perr(
                hline,
                "header must be `N directed|undirected self_loops=0|1`".into(),
            ));
        }
        let n: usize = fields[0]
            .parse()
            .map_err(|_| perr(hline, format!("bad node count {:?}", fields[0])))?;
        let directed = match fields[1] {
            "directed" => true,
            "undirected" => false,
            other => return Err(perr(hline, format!("unknown graph kind {other:?}"))),
        };
        let self_loops = match fields[2] {
            "self_loops=1" => true,
            "self_loops=0" => false,
            other => return Err(perr(hline, format!("bad self_loops field {other:?}"))),
        };
        let mut edges = Vec::new();
        for (line, l) in lines {
            let toks: Vec<&str> = l.split_whitespace().collect();
            if toks.len() != 2 {
                return Err(perr(line, "expected `src dst`".into()));
            }
            let parse = |t: &str| {
                t.parse::<usize>()
                    .map_err(|_| perr(line, format!("bad node index {t:?}")))
            };
            let (a, b) = (parse(toks[0])?, parse(toks[1])?);
            edges.push((a, b));
            if !directed {
                edges.push((b, a));
            }
        }
        Topology::from_one_based(n, edges, self_loops)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Topology::parse(&text, path)
    }

    /// Serializes as a directed edge list (1-based).
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{} directed self_loops={}\n",
            self.n_nodes,
            u8::from(self.allow_self_loops)
        );
        for &(a, b) in &self.edges {
            out.push_str(&format!("{} {}\n", a + 1, b + 1));
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Sparse stand-in for the `N² × E` basis of permitted entries.
///
/// Pair `k` is the `(row, col)` position of coefficient `k` in a vectorized
/// shift operator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupportBasis {
    n_nodes: usize,
    pairs: Vec<(usize, usize)>,
}

impl SupportBasis {
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn e_count(&self) -> usize {
        self.pairs.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    /// Scatters coefficients into an `N × N` matrix; off-support entries stay exactly zero.
    pub fn to_matrix(&self, coeffs: &[f64]) -> Matrix {
        assert_eq!(coeffs.len(), self.pairs.len());
        let mut m = Matrix::zeros(self.n_nodes, self.n_nodes);
        for (&(r, c), &v) in self.pairs.iter().zip(coeffs) {
            m[(r, c)] = v;
        }
        m
    }

    /// Gathers the supported entries of `m`.
    pub fn coefficients(&self, m: &Matrix) -> Vec<f64> {
        self.pairs.iter().map(|&(r, c)| m[(r, c)]).collect()
    }
}
