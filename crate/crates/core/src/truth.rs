//! Harness-side ground truth for scoring extracted labels.
//!
//! Nothing in `adversary` or `refinery` accepts this type.

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::data::{DataError, Dataset};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    rows: Vec<(Vec<f64>, usize)>,
    index: HashMap<Vec<u64>, Vec<usize>>,
}

fn key(angles: &[f64]) -> Vec<u64> {
    angles.iter().map(|x| x.to_bits()).collect()
}

impl GroundTruth {
    pub fn new(rows: Vec<(Vec<f64>, usize)>) -> Self {
        let mut index: HashMap<Vec<u64>, Vec<usize>> = HashMap::new();
        for (i, (a, _)) in rows.iter().enumerate() {
            index.entry(key(a)).or_default().push(i);
        }
        Self { rows, index }
    }

    /// Encoded training rows of an angle-encoded dataset.
    pub fn from_train_split(ds: &Dataset) -> Self {
        Self::new(
            ds.train_indices()
                .iter()
                .map(|&r| (ds.row(r).to_vec(), ds.labels()[r]))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[(Vec<f64>, usize)] {
        &self.rows
    }

    /// True labels of every row with exactly these angles.
    pub fn labels_of(&self, angles: &[f64]) -> impl Iterator<Item = usize> + '_ {
        self.index
            .get(&key(angles))
            .into_iter()
            .flatten()
            .map(|&i| self.rows[i].1)
    }

    pub fn is_correct(&self, angles: &[f64], label: usize) -> bool {
        self.labels_of(angles).any(|l| l == label)
    }

    /// Points whose label disagrees with (or is unknown to) the ground truth.
    pub fn count_wrong<'a>(&self, points: impl IntoIterator<Item = (&'a [f64], usize)>) -> usize {
        points.into_iter().filter(|&(a, l)| !self.is_correct(a, l)).count()
    }

    /// Fraction of points labeled correctly; 0 for no points.
    pub fn accuracy<'a>(&self, points: impl IntoIterator<Item = (&'a [f64], usize)>) -> f64 {
        let (mut n, mut hits) = (0usize, 0usize);
        for (a, l) in points {
            n += 1;
            hits += usize::from(self.is_correct(a, l));
        }
        if n == 0 {
            0.0
        } else {
            hits as f64 / n as f64
        }
    }

    /// Header `a0,…,a{d-1},label`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(w);
        let d = self.rows.first().map_or(0, |r| r.0.len());
        let mut header: Vec<String> = (0..d).map(|j| format!("a{j}")).collect();
        header.push("label".into());
        w.write_record(&header)?;
        for (a, l) in &self.rows {
            let mut rec: Vec<String> = a.iter().map(f64::to_string).collect();
            rec.push(l.to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| DataError::Io {
            path: "<ground truth>".into(),
            source: e,
        })?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, DataError> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i as u64 + 2;
            let rec = rec?;
            let n = rec.len();
            if n < 2 {
                return Err(DataError::Malformed {
                    line,
                    message: "expected angle columns and a label".into(),
                });
            }
            let bad = |j: usize| DataError::NonNumeric {
                line,
                column: format!("{j}"),
                value: rec[j].to_string(),
            };
            let angles = (0..n - 1)
                .map(|j| rec[j].parse::<f64>().map_err(|_| bad(j)))
                .collect::<Result<Vec<_>, _>>()?;
            let label = rec[n - 1].parse().map_err(|_| bad(n - 1))?;
            rows.push((angles, label));
        }
        Ok(Self::new(rows))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scoring_and_round_trip() {
        let gt = GroundTruth::new(vec![(vec![0.1, 0.2], 0), (vec![0.3, 1.0 / 3.0], 2), (vec![0.1, 0.2], 0)]);
        let pts = [(vec![0.1, 0.2], 0), (vec![0.3, 1.0 / 3.0], 1), (vec![9.0, 9.0], 0)];
        let it = || pts.iter().map(|(a, l)| (a.as_slice(), *l));
        assert_eq!(gt.count_wrong(it()), 2);
        assert_eq!(gt.accuracy(it()), 1.0 / 3.0);
        assert_eq!(gt.accuracy(std::iter::empty()), 0.0);

        let mut buf = Vec::new();
        gt.write_csv(&mut buf).unwrap();
        assert_eq!(GroundTruth::read_csv(buf.as_slice()).unwrap(), gt);
    }
}
