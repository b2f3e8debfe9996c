use super::{Mask, MaskError};
use crate::exec::Exec;

/// Square binary structuring element of side `2r + 1`, origin at the centre.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuringElement {
    radius: usize,
    bits: Vec<bool>,
}

impl StructuringElement {
    pub fn new(radius: usize, bits: Vec<bool>) -> Result<Self, MaskError> {
        let side = 2 * radius + 1;
        if bits.len() != side * side || !bits[radius * side + radius] {
            return Err(MaskError::InvalidElement);
        }
        Ok(Self { radius, bits })
    }

    /// The `(2r+1) x (2r+1)` all-ones square.
    pub fn square(radius: usize) -> Self {
        let side = 2 * radius + 1;
        Self {
            radius,
            bits: vec![true; side * side],
        }
    }

    /// 4-connected cross of radius 1.
    pub fn cross() -> Self {
        Self {
            radius: 1,
            bits: vec![false, true, false, true, true, true, false, true, false],
        }
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Offsets `(dy, dx)` of set cells relative to the origin.
    pub fn offsets(&self) -> Vec<(isize, isize)> {
        let side = 2 * self.radius + 1;
        let r = self.radius as isize;
        (0..side * side)
            .filter(|&i| self.bits[i])
            .map(|i| ((i / side) as isize - r, (i % side) as isize - r))
            .collect()
    }
}

impl Default for StructuringElement {
    fn default() -> Self {
        Self::square(1)
    }
}

fn dilate_once(m: &Mask, offsets: &[(isize, isize)], exec: Exec) -> Mask {
    let (h, w) = (m.height as isize, m.width as isize);
    let mut bits = vec![false; m.bits.len()];
    exec.for_each_row(&mut bits, m.width, |y, row| {
        let y = y as isize;
        for (x, out) in row.iter_mut().enumerate() {
            let x = x as isize;
            // Minkowski sum: p is set iff p - b lies in m for some b in the element.
            *out = offsets.iter().any(|&(dy, dx)| {
                let (sy, sx) = (y - dy, x - dx);
                sy >= 0 && sy < h && sx >= 0 && sx < w && m.bits[(sy * w + sx) as usize]
            });
        }
    });
    Mask { bits, ..m.clone() }
}

/// `n`-fold dilation of `m` by `element`; `n = 0` returns `m` unchanged.
pub fn dilate(m: &Mask, element: &StructuringElement, n: usize) -> Mask {
    dilate_with(m, element, n, Exec::default())
}

pub(crate) fn dilate_with(m: &Mask, element: &StructuringElement, n: usize, exec: Exec) -> Mask {
    let offsets = element.offsets();
    let mut cur = m.clone();
    for _ in 0..n {
        let next = dilate_once(&cur, &offsets, exec);
        // The element contains its origin, so a fixed point stays fixed.
        if next.bits == cur.bits {
            break;
        }
        cur = next;
    }
    cur
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::MaskKind;
    use proptest::prelude::*;

    #[test]
    fn zero_iterations_is_identity() {
        let m = Mask::from_fn(6, 6, MaskKind::Fine, |y, x| y == 2 && x < 3);
        assert_eq!(dilate(&m, &StructuringElement::square(1), 0), m);
    }

    #[test]
    fn center_pixel_grows_to_3x3_block() {
        let m = Mask::from_fn(5, 5, MaskKind::Fine, |y, x| y == 2 && x == 2);
        let d = dilate(&m, &StructuringElement::square(1), 1);
        let expected = Mask::from_fn(5, 5, MaskKind::Fine, |y, x| (1..=3).contains(&y) && (1..=3).contains(&x));
        assert_eq!(d.bits, expected.bits);
    }

    #[test]
    fn saturates_past_the_diameter() {
        let m = Mask::from_fn(7, 4, MaskKind::Fine, |y, x| y == 6 && x == 0);
        let d = dilate(&m, &StructuringElement::square(1), 7 + 4);
        assert!(d.bits.iter().all(|&b| b));
    }

    #[test]
    fn element_requires_origin() {
        assert_eq!(
            StructuringElement::new(1, vec![true, true, true, true, false, true, true, true, true]),
            Err(MaskError::InvalidElement)
        );
    }

    #[test]
    fn asymmetric_element_follows_minkowski_convention() {
        // Element {origin, (0, +1)} shifts set pixels to the right.
        let el = StructuringElement::new(1, vec![false, false, false, false, true, true, false, false, false]).unwrap();
        let m = Mask::from_fn(1, 4, MaskKind::Fine, |_, x| x == 1);
        let d = dilate(&m, &el, 1);
        assert_eq!(d.bits, vec![false, true, true, false]);
    }

    fn arb_mask() -> impl Strategy<Value = Mask> {
        proptest::collection::vec(proptest::bool::weighted(0.08), 20 * 20).prop_map(|bits| Mask {
            height: 20,
            width: 20,
            bits,
            kind: MaskKind::Fine,
            source: String::new(),
        })
    }

    proptest! {
        #[test]
        fn monotone_extensive_and_composable(m in arb_mask(), n1 in 0usize..4, n2 in 0usize..4) {
            let b = StructuringElement::square(1);
            let a = dilate(&m, &b, n1);
            let c = dilate(&m, &b, n1 + n2);
            prop_assert!(m.is_subset(&a).unwrap());
            prop_assert!(a.is_subset(&c).unwrap());
            prop_assert_eq!(dilate(&a, &b, n2).bits, c.bits);
        }

        #[test]
        fn sequential_and_parallel_agree(m in arb_mask(), n in 0usize..5) {
            let b = StructuringElement::cross();
            prop_assert_eq!(
                dilate_with(&m, &b, n, Exec::Sequential).bits,
                dilate_with(&m, &b, n, Exec::Parallel).bits
            );
        }
    }
}
