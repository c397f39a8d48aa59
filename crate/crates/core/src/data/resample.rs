use super::{LabeledTable, PROPAGATED};
use crate::error::{Error, Result};
use crate::random::RandomSource;

/// Appends minority-class rows drawn uniformly with replacement until both
/// classes have the same count. Original rows keep their positions.
pub fn upsample_minority(train: &LabeledTable, rng: &mut RandomSource) -> Result<LabeledTable> {
    let (neg, pos) = train.class_counts();
    if neg == 0 || pos == 0 {
        return Err(Error::SingleClass);
    }
    if neg == pos {
        return Ok(train.clone());
    }
    let minority_label = if pos < neg { PROPAGATED } else { 1 - PROPAGATED };
    let minority: Vec<usize> = (0..train.n_rows())
        .filter(|&i| train.labels()[i] == minority_label)
        .collect();
    let deficit = neg.abs_diff(pos);
    let mut rows: Vec<usize> = (0..train.n_rows()).collect();
    rows.extend((0..deficit).map(|_| minority[rng.index(minority.len())]));
    Ok(train.select(&rows))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: LabeledTable,
    pub test: LabeledTable,
}

/// Uniform shuffle, then the first `train_count` rows form the training set.
pub fn split(table: &LabeledTable, train_count: usize, rng: &mut RandomSource) -> Result<Split> {
    let n = table.n_rows();
    if train_count == 0 || train_count >= n {
        return Err(Error::InvalidTrainCount {
            train_count,
            total: n,
        });
    }
    let perm = rng.permutation(n);
    Ok(Split {
        train: table.select(&perm[..train_count]),
        test: table.select(&perm[train_count..]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{default_feature_names, generate_synthetic, GeneratorConfig};

    fn table_with_labels(labels: &[u8]) -> LabeledTable {
        let features: Vec<f64> = (0..labels.len())
            .flat_map(|i| (0..8).map(move |j| (i * 8 + j) as f64))
            .collect();
        LabeledTable::new(default_feature_names(), features, labels.to_vec()).unwrap()
    }

    fn sorted_rows(t: &LabeledTable) -> Vec<(Vec<u64>, u8)> {
        let mut v: Vec<(Vec<u64>, u8)> = t
            .rows()
            .zip(t.labels())
            .map(|(r, &y)| (r.iter().map(|x| x.to_bits()).collect(), y))
            .collect();
        v.sort();
        v
    }

    #[test]
    fn upsample_65_35() {
        let labels: Vec<u8> = (0..100).map(|i| u8::from(i % 20 < 7)).collect();
        let t = table_with_labels(&labels);
        assert_eq!(t.class_counts(), (65, 35));
        let up = upsample_minority(&t, &mut RandomSource::new(1, 0)).unwrap();
        assert_eq!(up.n_rows(), 130);
        assert_eq!(up.class_counts(), (65, 65));
        // originals retained, in place
        assert_eq!(up.select(&(0..100).collect::<Vec<_>>()), t);
        // no synthetic rows
        let originals = sorted_rows(&t);
        for (r, y) in sorted_rows(&up) {
            assert!(originals.binary_search(&(r, y)).is_ok());
        }
    }

    #[test]
    fn upsample_balanced_is_identity() {
        let t = table_with_labels(&[0, 1, 1, 0]);
        assert_eq!(upsample_minority(&t, &mut RandomSource::new(1, 0)).unwrap(), t);
    }

    #[test]
    fn upsample_single_class_errors() {
        let t = table_with_labels(&[1, 1, 1]);
        assert!(matches!(
            upsample_minority(&t, &mut RandomSource::new(1, 0)),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn upsample_is_deterministic() {
        let labels: Vec<u8> = (0..50).map(|i| u8::from(i % 3 == 0)).collect();
        let t = table_with_labels(&labels);
        let a = upsample_minority(&t, &mut RandomSource::new(8, 1)).unwrap();
        let b = upsample_minority(&t, &mut RandomSource::new(8, 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_1600_400_conserves_rows() {
        let t = generate_synthetic(2000, &RandomSource::new(3, 0), &GeneratorConfig::default()).unwrap();
        let s = split(&t, 1600, &mut RandomSource::new(3, 1)).unwrap();
        assert_eq!(s.train.n_rows(), 1600);
        assert_eq!(s.test.n_rows(), 400);
        let mut union = sorted_rows(&s.train);
        union.extend(sorted_rows(&s.test));
        union.sort();
        assert_eq!(union, sorted_rows(&t));
        let again = split(&t, 1600, &mut RandomSource::new(3, 1)).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn split_rejects_bad_counts() {
        let t = table_with_labels(&[0, 1, 0]);
        let mut rng = RandomSource::new(0, 0);
        assert!(split(&t, 0, &mut rng).is_err());
        assert!(split(&t, 3, &mut rng).is_err());
        assert!(split(&t, 2, &mut rng).is_ok());
    }
}
