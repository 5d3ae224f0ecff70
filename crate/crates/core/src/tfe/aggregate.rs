use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;

use crate::autodiff::Tensor;

use super::TfeError;

/// Cell-cycle phase; the declaration order is the tie-break order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    G1,
    S,
    G2M,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::G1, Phase::S, Phase::G2M];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn parse(s: &str) -> Option<Phase> {
        match s.trim().to_ascii_uppercase().as_str() {
            "G1" => Some(Phase::G1),
            "S" => Some(Phase::S),
            "G2M" | "G2/M" => Some(Phase::G2M),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::G1 => "G1",
            Phase::S => "S",
            Phase::G2M => "G2M",
        }
    }
}

/// Per-cell embeddings with phase and cluster labels.
#[derive(Clone, Debug, PartialEq)]
pub struct CellPopulation {
    embeddings: Tensor,
    phases: Vec<Phase>,
    clusters: Vec<u32>,
}

impl CellPopulation {
    pub fn new(embeddings: Tensor, phases: Vec<Phase>, clusters: Vec<u32>) -> Result<Self, TfeError> {
        if embeddings.ndim() != 2 {
            return Err(TfeError::Shape(format!("embeddings {:?}", embeddings.shape())));
        }
        let n = embeddings.shape()[0];
        if phases.len() != n || clusters.len() != n {
            return Err(TfeError::Shape(format!(
                "{n} cells, {} phases, {} clusters",
                phases.len(),
                clusters.len()
            )));
        }
        if !embeddings.is_finite() {
            return Err(TfeError::NonFinite);
        }
        Ok(CellPopulation {
            embeddings,
            phases,
            clusters,
        })
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.shape()[1]
    }

    pub fn embeddings(&self) -> &Tensor {
        &self.embeddings
    }

    pub fn phases(&self) -> &[Phase] {
        &self.phases
    }

    pub fn clusters(&self) -> &[u32] {
        &self.clusters
    }

    pub fn phase_counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for p in &self.phases {
            c[p.index()] += 1;
        }
        c
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Resolution {
    Bulk,
    SingleCell,
}

/// `N×d` expression matrix; `N = 1` for bulk.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpressionProfile {
    pub matrix: Tensor,
    pub resolution: Resolution,
}

impl ExpressionProfile {
    pub fn bulk(v: Vec<f64>) -> Self {
        let d = v.len();
        ExpressionProfile {
            matrix: Tensor::new(vec![1, d], v).expect("row vector"),
            resolution: Resolution::Bulk,
        }
    }

    pub fn rows(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.matrix.shape()[1]
    }
}

/// Splits `n` seats across phases in proportion to `counts` by largest
/// remainder; equal remainders go to the earlier phase.
pub fn phase_allocation(counts: [usize; 3], n: usize) -> [usize; 3] {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return [0; 3];
    }
    let mut seats = [0; 3];
    let mut rems = [0; 3];
    for p in 0..3 {
        let q = n * counts[p];
        seats[p] = q / total;
        rems[p] = q % total;
    }
    let mut left = n - seats.iter().sum::<usize>();
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| rems[b].cmp(&rems[a]).then(a.cmp(&b)));
    for &p in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if counts[p] > 0 {
            seats[p] += 1;
            left -= 1;
        }
    }
    seats
}

/// Mean-pools cells within each (phase, cluster) group, then fills each
/// phase's seats from its group vectors: a random subset when there are
/// enough groups, draws with replacement otherwise.
pub fn aggregate<R: Rng + ?Sized>(
    pop: &CellPopulation,
    n: usize,
    rng: &mut R,
) -> Result<ExpressionProfile, TfeError> {
    if pop.is_empty() {
        return Err(TfeError::EmptyPopulation);
    }
    let d = pop.dim();
    let mut groups: BTreeMap<(Phase, u32), (Vec<f64>, usize)> = BTreeMap::new();
    for (c, (&ph, &cl)) in pop.phases.iter().zip(&pop.clusters).enumerate() {
        let entry = groups.entry((ph, cl)).or_insert_with(|| (vec![0.0; d], 0));
        entry
            .0
            .iter_mut()
            .zip(pop.embeddings.row(c))
            .for_each(|(a, b)| *a += b);
        entry.1 += 1;
    }
    let mut by_phase: [Vec<Vec<f64>>; 3] = Default::default();
    for ((ph, _), (sum, count)) in groups {
        by_phase[ph.index()].push(sum.into_iter().map(|v| v / count as f64).collect());
    }
    let seats = phase_allocation(pop.phase_counts(), n);
    let mut data = Vec::with_capacity(n * d);
    for p in 0..3 {
        let pool = &by_phase[p];
        let want = seats[p];
        if want == 0 {
            continue;
        }
        if pool.len() >= want {
            let mut picked = index::sample(rng, pool.len(), want).into_vec();
            picked.sort_unstable();
            for i in picked {
                data.extend_from_slice(&pool[i]);
            }
        } else {
            for _ in 0..want {
                data.extend_from_slice(&pool[rng.gen_range(0..pool.len())]);
            }
        }
    }
    Ok(ExpressionProfile {
        matrix: Tensor::new(vec![n, d], data).map_err(|e| TfeError::Shape(e.to_string()))?,
        resolution: Resolution::SingleCell,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn allocation_examples() {
        assert_eq!(phase_allocation([200, 100, 100], 128), [64, 32, 32]);
        // 128·(0.3, 0.3, 0.4) = (38.4, 38.4, 51.2): the spare seat goes to
        // G1, the first of the two tied 0.4 remainders.
        assert_eq!(phase_allocation([3, 3, 4], 128), [39, 38, 51]);
        assert_eq!(phase_allocation([0, 5, 0], 128), [0, 128, 0]);
    }

    #[test]
    fn identical_cells_give_identical_rows() {
        let v: Vec<f64> = (0..4).map(|i| i as f64).collect();
        let n = 10;
        let emb = Tensor::new(vec![n, 4], v.repeat(n)).unwrap();
        let phases = (0..n).map(|i| Phase::ALL[i % 3]).collect();
        let pop = CellPopulation::new(emb, phases, (0..n as u32).collect()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = aggregate(&pop, 128, &mut rng).unwrap();
        assert_eq!(out.rows(), 128);
        for r in 0..128 {
            assert_eq!(out.matrix.row(r), &v[..]);
        }
    }

    #[test]
    fn empty_population_is_an_error() {
        let pop = CellPopulation::new(Tensor::zeros(&[0, 3]), vec![], vec![]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(aggregate(&pop, 128, &mut rng), Err(TfeError::EmptyPopulation));
    }
}
