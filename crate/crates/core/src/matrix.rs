//! Dense PoI-by-platform matrices.
//!
//! Every per-pair quantity in the market (rates, prices, bids, valuations)
//! is indexed by `(poi, platform)`. Storage is row-major over PoIs, so a row
//! is one PoI's view across platforms and a column is one platform's view
//! across PoIs.

use serde::{Deserialize, Serialize};
use std::ops::{Deref, DerefMut};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMatrix {
    pois: usize,
    platforms: usize,
    data: Vec<f64>,
}

impl PairMatrix {
    pub fn filled(pois: usize, platforms: usize, value: f64) -> Self {
        Self {
            pois,
            platforms,
            data: vec![value; pois * platforms],
        }
    }

    pub fn zeros(pois: usize, platforms: usize) -> Self {
        Self::filled(pois, platforms, 0.0)
    }

    /// Builds from one `Vec` per PoI, each holding one entry per platform.
    pub fn from_rows(rows: &[Vec<f64>]) -> Option<Self> {
        let pois = rows.len();
        let platforms = rows.first().map_or(0, Vec::len);
        if pois == 0 || platforms == 0 || rows.iter().any(|r| r.len() != platforms) {
            return None;
        }
        Some(Self {
            pois,
            platforms,
            data: rows.concat(),
        })
    }

    pub fn from_fn(pois: usize, platforms: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(pois * platforms);
        for i in 0..pois {
            for n in 0..platforms {
                data.push(f(i, n));
            }
        }
        Self {
            pois,
            platforms,
            data,
        }
    }

    pub fn pois(&self) -> usize {
        self.pois
    }

    pub fn platforms(&self) -> usize {
        self.platforms
    }

    #[inline]
    pub fn get(&self, poi: usize, platform: usize) -> f64 {
        self.data[poi * self.platforms + platform]
    }

    #[inline]
    pub fn set(&mut self, poi: usize, platform: usize, value: f64) {
        self.data[poi * self.platforms + platform] = value;
    }

    pub fn row(&self, poi: usize) -> &[f64] {
        &self.data[poi * self.platforms..(poi + 1) * self.platforms]
    }

    pub fn column(&self, platform: usize) -> Vec<f64> {
        (0..self.pois).map(|i| self.get(i, platform)).collect()
    }

    pub fn set_column(&mut self, platform: usize, values: &[f64]) {
        for (i, v) in values.iter().enumerate() {
            self.set(i, platform, *v);
        }
    }

    pub fn set_row(&mut self, poi: usize, values: &[f64]) {
        let p = self.platforms;
        self.data[poi * p..(poi + 1) * p].copy_from_slice(values);
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.platforms).map(<[f64]>::to_vec).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Max-norm of `self - other`.
    pub fn max_abs_diff(&self, other: &PairMatrix) -> f64 {
        assert_eq!(self.data.len(), other.data.len(), "shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn same_shape(&self, other: &PairMatrix) -> bool {
        self.pois == other.pois && self.platforms == other.platforms
    }
}

macro_rules! pair_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub PairMatrix);

        impl Deref for $name {
            type Target = PairMatrix;
            fn deref(&self) -> &PairMatrix {
                &self.0
            }
        }

        impl DerefMut for $name {
            fn deref_mut(&mut self) -> &mut PairMatrix {
                &mut self.0
            }
        }

        impl From<PairMatrix> for $name {
            fn from(m: PairMatrix) -> Self {
                Self(m)
            }
        }
    };
}

pair_newtype!(
    /// Uploading rates, one per (PoI, platform) pair, inside `[rate_floor, 1]`.
    RateMatrix
);
pair_newtype!(
    /// Consistency prices, one per (PoI, platform) pair.
    PriceMatrix
);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_and_columns_index_the_same_storage() {
        let m = PairMatrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        assert_eq!(m.pois(), 2);
        assert_eq!(m.platforms(), 3);
        assert_eq!(m.row(1), &[4.0, 5.0, 6.0]);
        assert_eq!(m.column(2), vec![3.0, 6.0]);
        assert_eq!(m.get(0, 1), 2.0);
    }

    #[test]
    fn ragged_rows_are_rejected() {
        assert!(PairMatrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_none());
        assert!(PairMatrix::from_rows(&[]).is_none());
    }
}
