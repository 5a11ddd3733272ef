//! Region adjacency structures, discrete penalties, and the assembly of
//! the total penalty matrix from per-term blocks.
//!
//! Spatial terms over a set of regions use a graph-Laplacian penalty
//! built from an undirected adjacency structure; i.i.d. random-effect
//! terms use an identity penalty. Each penalized block occupies a
//! contiguous column range of the full coefficient vector, and the total
//! penalty is the sum of the padded blocks weighted by their smoothing
//! parameters.

use std::collections::BTreeSet;

use nalgebra::DMatrix;

use crate::basis::{BlockKind, DesignBlock};
use crate::error::Error;

/// Undirected adjacency over regions labelled 1..=n_regions.
#[derive(Debug, Clone)]
pub struct Adjacency {
    n_regions: usize,
    /// Edges with `a < b`, deduplicated, zero-based.
    edges: Vec<(usize, usize)>,
}

impl Adjacency {
    /// Parse the adjacency text format: first non-empty line holds the
    /// number of regions, each following non-empty line holds an edge
    /// "r s" in 1-based labels. Duplicate edges (in either order) are
    /// ignored; self-loops and out-of-range labels are errors.
    pub fn parse(text: &str) -> Result<Self, Error> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let n_regions: usize = lines
            .next()
            .ok_or_else(|| Error::data("adjacency file is empty"))?
            .parse()
            .map_err(|_| Error::data("adjacency file must start with the number of regions"))?;
        if n_regions == 0 {
            return Err(Error::data("adjacency region count must be positive"));
        }
        let mut edges = BTreeSet::new();
        for line in lines {
            let mut parts = line.split_whitespace();
            let a: usize = parts
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::data(format!("malformed adjacency line: {line:?}")))?;
            let b: usize = parts
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::data(format!("malformed adjacency line: {line:?}")))?;
            if parts.next().is_some() {
                return Err(Error::data(format!(
                    "adjacency line has extra fields: {line:?}"
                )));
            }
            if a == 0 || b == 0 || a > n_regions || b > n_regions {
                return Err(Error::data(format!(
                    "adjacency edge ({a}, {b}) outside regions 1..={n_regions}"
                )));
            }
            if a == b {
                return Err(Error::data(format!("adjacency self-loop at region {a}")));
            }
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            edges.insert((lo - 1, hi - 1));
        }
        Ok(Adjacency {
            n_regions,
            edges: edges.into_iter().collect(),
        })
    }

    pub fn n_regions(&self) -> usize {
        self.n_regions
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Number of neighbours of each region.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.n_regions];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }
}

/// Graph-Laplacian penalty: diagonal holds neighbour counts, off-diagonal
/// entries are −1 for adjacent pairs. Symmetric PSD with the constant
/// vector in its null space (one per connected component).
pub fn mrf_penalty(adj: &Adjacency) -> DMatrix<f64> {
    let r = adj.n_regions();
    let mut s = DMatrix::zeros(r, r);
    for &(a, b) in adj.edges() {
        s[(a, a)] += 1.0;
        s[(b, b)] += 1.0;
        s[(a, b)] -= 1.0;
        s[(b, a)] -= 1.0;
    }
    s
}

/// Incidence design for a region-labelled covariate: one indicator
/// column per region. Labels are 1-based and must lie in range; the
/// graph-Laplacian penalty is attached.
pub fn incidence_block(adj: &Adjacency, labels: &[f64]) -> Result<DesignBlock, Error> {
    let r = adj.n_regions();
    let mut columns = DMatrix::zeros(labels.len(), r);
    for (i, &lab) in labels.iter().enumerate() {
        if !lab.is_finite() || lab.fract() != 0.0 {
            return Err(Error::data(format!(
                "region label {lab} at row {} is not an integer",
                i + 1
            )));
        }
        let lab = lab as i64;
        if lab < 1 || lab as usize > r {
            return Err(Error::data(format!(
                "region label {lab} at row {} outside 1..={r}",
                i + 1
            )));
        }
        columns[(i, lab as usize - 1)] = 1.0;
    }
    Ok(DesignBlock {
        columns,
        penalty: Some(mrf_penalty(adj)),
        kind: BlockKind::Mrf,
    })
}

/// Incidence design for an i.i.d. random-effect factor: one indicator
/// column per level with an identity penalty (ridge toward zero). Levels
/// are 1-based integers up to `n_levels`.
pub fn random_effect_block(n_levels: usize, labels: &[f64]) -> Result<DesignBlock, Error> {
    if n_levels == 0 {
        return Err(Error::spec("random effect needs at least one level"));
    }
    let mut columns = DMatrix::zeros(labels.len(), n_levels);
    for (i, &lab) in labels.iter().enumerate() {
        if !lab.is_finite() || lab.fract() != 0.0 {
            return Err(Error::data(format!(
                "factor level {lab} at row {} is not an integer",
                i + 1
            )));
        }
        let lab = lab as i64;
        if lab < 1 || lab as usize > n_levels {
            return Err(Error::data(format!(
                "factor level {lab} at row {} outside 1..={n_levels}",
                i + 1
            )));
        }
        columns[(i, lab as usize - 1)] = 1.0;
    }
    Ok(DesignBlock {
        columns,
        penalty: Some(DMatrix::identity(n_levels, n_levels)),
        kind: BlockKind::Random,
    })
}

/// One penalized block's placement in the full coefficient vector.
#[derive(Debug, Clone)]
pub struct PenaltyTerm {
    /// First coefficient index of the block.
    pub offset: usize,
    /// Block penalty matrix (square, dimension = block width).
    pub matrix: DMatrix<f64>,
}

/// All penalized blocks of a model, with methods to assemble the total
/// penalty for a vector of smoothing parameters.
#[derive(Debug, Clone, Default)]
pub struct PenaltyAssembly {
    pub terms: Vec<PenaltyTerm>,
    /// Total coefficient count p.
    pub dim: usize,
}

impl PenaltyAssembly {
    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    /// S_λ = Σ_j λ_j · pad(S̄_j).
    pub fn assemble(&self, lambda: &[f64]) -> Result<DMatrix<f64>, Error> {
        if lambda.len() != self.terms.len() {
            return Err(Error::spec(format!(
                "{} smoothing parameters supplied for {} penalized terms",
                lambda.len(),
                self.terms.len()
            )));
        }
        let mut s = DMatrix::zeros(self.dim, self.dim);
        for (term, &lam) in self.terms.iter().zip(lambda) {
            if !(lam >= 0.0) {
                return Err(Error::spec(format!(
                    "smoothing parameter {lam} must be nonnegative"
                )));
            }
            let q = term.matrix.nrows();
            for i in 0..q {
                for j in 0..q {
                    s[(term.offset + i, term.offset + j)] += lam * term.matrix[(i, j)];
                }
            }
        }
        Ok(s)
    }

    /// pad(S̄_j) for a single term, used by smoothing-parameter
    /// derivatives of the penalized objective.
    pub fn padded_term(&self, j: usize) -> DMatrix<f64> {
        let term = &self.terms[j];
        let mut s = DMatrix::zeros(self.dim, self.dim);
        let q = term.matrix.nrows();
        for a in 0..q {
            for b in 0..q {
                s[(term.offset + a, term.offset + b)] = term.matrix[(a, b)];
            }
        }
        s
    }
}
