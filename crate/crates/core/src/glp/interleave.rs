use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

/// Builds the augmented matrix of a layer set: augmented column `j·x + i` is
/// column `j` of member `i`, so members cycle fastest.
pub fn interleave<T: Clone>(members: &[Array2<T>]) -> Result<Array2<T>> {
    let first = members
        .first()
        .ok_or_else(|| Error::Shape("cannot interleave an empty layer set".into()))?;
    let (rows, cols) = first.dim();
    if let Some((i, m)) = members.iter().enumerate().find(|(_, m)| m.dim() != (rows, cols)) {
        return Err(Error::Shape(format!(
            "member {i} is {:?}, expected {:?}",
            m.dim(),
            (rows, cols)
        )));
    }
    let x = members.len();
    let views: Vec<_> = (0..cols * x)
        .map(|c| members[c % x].column(c / x))
        .collect();
    ndarray::stack(Axis(1), &views).map_err(|e| Error::Shape(e.to_string()))
}

/// Inverse of [`interleave`].
pub fn deinterleave<T: Clone>(aug: &Array2<T>, x: usize) -> Result<Vec<Array2<T>>> {
    let (_, total) = aug.dim();
    if x == 0 || total % x != 0 {
        return Err(Error::Shape(format!(
            "{total} augmented columns do not split into {x} members"
        )));
    }
    (0..x)
        .map(|i| {
            let cols: Vec<_> = (i..total).step_by(x).map(|c| aug.column(c)).collect();
            ndarray::stack(Axis(1), &cols).map_err(|e| Error::Shape(e.to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn single_member_is_identity() {
        let w = array![[1, 2, 3], [4, 5, 6]];
        assert_eq!(interleave(std::slice::from_ref(&w)).unwrap(), w);
    }

    #[test]
    fn two_members_alternate() {
        let a = array![[10, 11]];
        let b = array![[20, 21]];
        assert_eq!(interleave(&[a, b]).unwrap(), array![[10, 20, 11, 21]]);
    }

    #[test]
    fn eight_members_of_768_columns() {
        // entry encodes (member, column) so positions can be decoded
        let members: Vec<Array2<u32>> = (0..8)
            .map(|i| Array2::from_shape_fn((2, 768), |(_, j)| (i * 10_000 + j) as u32))
            .collect();
        let aug = interleave(&members).unwrap();
        assert_eq!(aug.dim(), (2, 8 * 768));
        // inverse permutation: position p holds member p % 8, column p / 8
        let mut seen = vec![false; 8 * 768];
        for (p, v) in aug.row(0).iter().enumerate() {
            let (i, j) = ((v / 10_000) as usize, (v % 10_000) as usize);
            assert_eq!(p, j * 8 + i);
            assert!(!seen[p]);
            seen[p] = true;
        }
        assert_eq!(deinterleave(&aug, 8).unwrap(), members);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = Array2::<i32>::zeros((2, 2));
        let b = Array2::<i32>::zeros((2, 3));
        assert!(interleave(&[a, b]).is_err());
        assert!(interleave::<i32>(&[]).is_err());
    }

    proptest! {
        #[test]
        fn deinterleave_inverts(x in 1usize..9, rows in 1usize..6, cols in 1usize..12, seed in any::<u64>()) {
            let members: Vec<Array2<u64>> = (0..x)
                .map(|i| Array2::from_shape_fn((rows, cols), |(r, c)| seed ^ ((i * 1000 + r * 100 + c) as u64)))
                .collect();
            let aug = interleave(&members).unwrap();
            prop_assert_eq!(deinterleave(&aug, x).unwrap(), members);
        }
    }
}
