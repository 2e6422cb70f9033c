//! Anchor selection and projection into relative coordinates.
//!
//! A sample's relative representation is the vector of its cosine
//! similarities to an ordered set of anchors, each anchor embedded by the
//! same model that produced the sample.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm, shuffle, Matrix, Seed, NORM_EPS};
use crate::space::{EmbeddingSpace, Label, RelativeSpace};

pub const DEFAULT_ANCHOR_COUNT: usize = 256;

/// Ordered, duplicate-free anchor ids shared by every projected space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorSet {
    ids: Vec<String>,
}

impl AnchorSet {
    pub fn new(ids: Vec<String>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::InvalidParameter("anchor set must not be empty".into()));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::InvalidParameter(format!("anchor `{dup}` listed twice")));
        }
        Ok(Self { ids })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Looks up this set's embeddings in `source`, in anchor order.
    pub fn resolve(&self, source: &EmbeddingSpace) -> Result<Matrix> {
        let index = source.index();
        let rows = self
            .ids
            .iter()
            .map(|id| index.get(id.as_str()).copied().ok_or_else(|| Error::MissingAnchorEmbedding(id.clone())))
            .collect::<Result<Vec<_>>>()?;
        Ok(source.embeddings.select_rows(&rows))
    }
}

/// Uniform sample of `count` ids from `pool` without replacement, in draw order.
pub fn select_anchors(pool: &EmbeddingSpace, count: usize, seed: Seed) -> Result<AnchorSet> {
    select_anchor_ids(&pool.sample_ids, count, seed)
}

pub fn select_anchor_ids(pool: &[String], count: usize, seed: Seed) -> Result<AnchorSet> {
    if count == 0 {
        return Err(Error::InvalidParameter("anchor count must be >= 1".into()));
    }
    if count > pool.len() {
        return Err(Error::PoolTooSmall { requested: count, available: pool.len() });
    }
    let mut ids = pool.to_vec();
    shuffle(&mut ids, &mut seed.rng());
    ids.truncate(count);
    AnchorSet::new(ids)
}

/// Random sample that covers as many classes as possible: classes are
/// visited round-robin (in a seeded order) and each contributes a random
/// not-yet-chosen sample until `count` anchors are drawn.
pub fn select_anchors_stratified(pool: &EmbeddingSpace, count: usize, seed: Seed) -> Result<AnchorSet> {
    if count == 0 {
        return Err(Error::InvalidParameter("anchor count must be >= 1".into()));
    }
    if count > pool.len() {
        return Err(Error::PoolTooSmall { requested: count, available: pool.len() });
    }
    let mut rng = seed.rng();
    let mut by_class: BTreeMap<Label, Vec<String>> = BTreeMap::new();
    for (id, &label) in pool.sample_ids.iter().zip(&pool.labels) {
        by_class.entry(label).or_default().push(id.clone());
    }
    let mut buckets: Vec<Vec<String>> = by_class.into_values().collect();
    for b in &mut buckets {
        shuffle(b, &mut rng);
        b.reverse();
    }
    shuffle(&mut buckets, &mut rng);

    let mut ids = Vec::with_capacity(count);
    'outer: loop {
        for b in &mut buckets {
            if let Some(id) = b.pop() {
                ids.push(id);
                if ids.len() == count {
                    break 'outer;
                }
            }
        }
    }
    AnchorSet::new(ids)
}

/// Projects `space` onto `anchors`, reading anchor embeddings from `space` itself.
pub fn project_relative(space: &EmbeddingSpace, anchors: &AnchorSet) -> Result<RelativeSpace> {
    project_relative_with(space, anchors, space)
}

/// Projects `space` onto `anchors` whose embeddings are looked up in
/// `anchor_source`, which must come from the same model as `space`.
pub fn project_relative_with(
    space: &EmbeddingSpace,
    anchors: &AnchorSet,
    anchor_source: &EmbeddingSpace,
) -> Result<RelativeSpace> {
    let anchor_rows = anchors.resolve(anchor_source)?;
    let similarities = cosine_matrix(&space.embeddings, &anchor_rows)?;
    Ok(RelativeSpace {
        similarities,
        sample_ids: space.sample_ids.clone(),
        labels: space.labels.clone(),
        task_id: space.task_id.clone(),
        anchor_ids: anchors.ids().to_vec(),
    })
}

/// `out[i][j] = cos(x_i, a_j)`, clamped to `[-1, 1]`.
pub fn cosine_matrix(x: &Matrix, anchors: &Matrix) -> Result<Matrix> {
    if x.cols() != anchors.cols() {
        return Err(Error::DimensionMismatch { expected: anchors.cols(), actual: x.cols() });
    }
    let unit = |m: &Matrix| -> Result<Vec<Vec<f64>>> {
        m.iter_rows()
            .map(|r| {
                let n = norm(r);
                if n < NORM_EPS {
                    return Err(Error::ZeroNormVector);
                }
                Ok(r.iter().map(|v| v / n).collect())
            })
            .collect()
    };
    let a = unit(anchors)?;
    let k = a.len();
    let rows: Vec<Vec<f64>> = (0..x.rows())
        .into_par_iter()
        .map(|i| {
            let row = x.row(i);
            let n = norm(row);
            if n < NORM_EPS {
                return Err(Error::ZeroNormVector);
            }
            Ok(a.iter()
                .map(|aj| (row.iter().zip(aj).map(|(p, q)| p * q).sum::<f64>() / n).clamp(-1.0, 1.0))
                .collect())
        })
        .collect::<Result<_>>()?;
    let data: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(Matrix::from_parts_unchecked(x.rows(), k, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cosine_similarity, random_orthogonal};
    use proptest::prelude::*;

    fn space(rows: &[&[f64]]) -> EmbeddingSpace {
        let m = Matrix::from_rows(rows).unwrap();
        let ids = (0..rows.len()).map(|i| format!("s{i}")).collect();
        EmbeddingSpace::new(m, ids, vec![0; rows.len()], "t").unwrap()
    }

    #[test]
    fn projection_example() {
        let x = space(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let anchor_src = {
            let m = Matrix::from_rows(&[[1.0, 0.0], [1.0, 1.0]]).unwrap();
            EmbeddingSpace::new(m, vec!["a0".into(), "a1".into()], vec![0, 0], "t").unwrap()
        };
        let anchors = AnchorSet::new(vec!["a0".into(), "a1".into()]).unwrap();
        let r = project_relative_with(&x, &anchors, &anchor_src).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let want = [1.0, h, 0.0, h];
        for (g, w) in r.similarities.as_slice().iter().zip(want) {
            assert!((g - w).abs() < 1e-15);
        }
        assert_eq!(r.anchor_ids, anchors.ids());
        assert!(r.validate().is_ok());
    }

    #[test]
    fn self_anchors_give_unit_diagonal() {
        let x = space(&[&[1.0, 2.0, 0.5], &[-1.0, 0.3, 2.0], &[0.2, 0.2, -3.0]]);
        let anchors = AnchorSet::new(x.sample_ids.clone()).unwrap();
        let r = project_relative(&x, &anchors).unwrap();
        for i in 0..3 {
            assert!((r.similarities.get(i, i) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn single_anchor_shape() {
        let x = space(&[&[1.0, 2.0], &[3.0, 1.0], &[0.0, 1.0]]);
        let r = project_relative(&x, &AnchorSet::new(vec!["s1".into()]).unwrap()).unwrap();
        assert_eq!((r.similarities.rows(), r.similarities.cols()), (3, 1));
    }

    #[test]
    fn missing_anchor_is_an_error() {
        let x = space(&[&[1.0, 2.0]]);
        let err = project_relative(&x, &AnchorSet::new(vec!["zz".into()]).unwrap()).unwrap_err();
        assert!(matches!(err, Error::MissingAnchorEmbedding(id) if id == "zz"));
    }

    #[test]
    fn select_anchor_cases() {
        let pool: Vec<String> = (0..1000).map(|i| format!("p{i:04}")).collect();
        let a = select_anchor_ids(&pool, 256, Seed(0)).unwrap();
        assert_eq!(a.len(), 256);
        assert_eq!(a.ids().iter().collect::<HashSet<_>>().len(), 256);
        assert_eq!(a, select_anchor_ids(&pool, 256, Seed(0)).unwrap());

        let all = select_anchor_ids(&pool[..10], 10, Seed(5)).unwrap();
        let mut sorted = all.ids().to_vec();
        sorted.sort();
        assert_eq!(sorted, pool[..10].to_vec());

        assert!(matches!(
            select_anchor_ids(&pool[..3], 4, Seed(0)),
            Err(Error::PoolTooSmall { requested: 4, available: 3 })
        ));
        assert!(AnchorSet::new(vec!["a".into(), "a".into()]).is_err());
    }

    #[test]
    fn stratified_selection_covers_classes() {
        let n = 60;
        let m = Matrix::new(n, 2, (0..2 * n).map(|i| 1.0 + i as f64).collect()).unwrap();
        let ids = (0..n).map(|i| format!("s{i:03}")).collect();
        let labels = (0..n as u32).map(|i| i % 12).collect();
        let pool = EmbeddingSpace::new(m, ids, labels, "pool").unwrap();
        let a = select_anchors_stratified(&pool, 12, Seed(1)).unwrap();
        let idx = pool.index();
        let classes: HashSet<_> = a.ids().iter().map(|id| pool.labels[idx[id.as_str()]]).collect();
        assert_eq!(classes.len(), 12);
        assert_eq!(a, select_anchors_stratified(&pool, 12, Seed(1)).unwrap());
        assert_eq!(select_anchors_stratified(&pool, 60, Seed(1)).unwrap().len(), 60);
    }

    fn arb_space(n: usize, d: usize) -> impl Strategy<Value = EmbeddingSpace> {
        prop::collection::vec(-3.0..3.0f64, n * d).prop_filter_map("zero row", move |data| {
            let m = Matrix::new(n, d, data).ok()?;
            if m.iter_rows().any(|r| norm(r) < 1e-3) {
                return None;
            }
            let ids = (0..n).map(|i| format!("s{i:02}")).collect();
            EmbeddingSpace::new(m, ids, vec![0; n], "t").ok()
        })
    }

    proptest! {
        #[test]
        fn invariant_under_rotation_and_scale(x in arb_space(12, 5), seed in any::<u64>(), alpha in 0.01..100.0f64) {
            let anchors = select_anchor_ids(&x.sample_ids, 4, Seed(seed)).unwrap();
            let base = project_relative(&x, &anchors).unwrap();
            let q = random_orthogonal(5, Seed(seed ^ 1)).unwrap();
            let mut moved = x.clone();
            moved.embeddings = x.embeddings.matmul(&q).unwrap().scale(alpha);
            let r = project_relative(&moved, &anchors).unwrap();
            prop_assert!(base.similarities.max_abs_diff(&r.similarities) <= 1e-9);
            prop_assert!(r.similarities.as_slice().iter().all(|v| (-1.0..=1.0).contains(v)));
        }

        #[test]
        fn anchor_permutation_permutes_columns(x in arb_space(8, 3), seed in any::<u64>()) {
            let anchors = select_anchor_ids(&x.sample_ids, 5, Seed(seed)).unwrap();
            let mut perm = anchors.ids().to_vec();
            shuffle(&mut perm, &mut Seed(seed).derive(1).rng());
            let permuted = AnchorSet::new(perm.clone()).unwrap();
            let a = project_relative(&x, &anchors).unwrap();
            let b = project_relative(&x, &permuted).unwrap();
            for (j, id) in perm.iter().enumerate() {
                let src = anchors.ids().iter().position(|x| x == id).unwrap();
                for i in 0..x.len() {
                    prop_assert_eq!(b.similarities.get(i, j), a.similarities.get(i, src));
                }
            }
        }

        #[test]
        fn matches_scalar_cosine(x in arb_space(6, 4)) {
            let anchors = AnchorSet::new(vec!["s00".into(), "s03".into()]).unwrap();
            let r = project_relative(&x, &anchors).unwrap();
            for i in 0..6 {
                for (j, a) in [0usize, 3].iter().enumerate() {
                    let c = cosine_similarity(x.embeddings.row(i), x.embeddings.row(*a)).unwrap();
                    prop_assert!((r.similarities.get(i, j) - c).abs() <= 1e-12);
                }
            }
        }
    }
}
