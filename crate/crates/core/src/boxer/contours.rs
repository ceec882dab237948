//! Topological border following on binary images.
//!
//! Foreground is 8-connected, background 4-connected. Each 8-connected
//! foreground component has exactly one outer border; holes give hole borders.

use serde::{Deserialize, Serialize};

use super::{BinaryImage, BoxerError};
use crate::geometry::BBox;

/// A traced border.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contour {
    /// Border pixels `(x, y)` in tracing order.
    pub points: Vec<(u32, u32)>,
    /// Pixel count of the foreground component this border belongs to.
    pub region_area: usize,
    pub is_outer: bool,
}

/// Neighbour offsets `(dy, dx)` in clockwise order starting east (rows grow down).
const RING: [(isize, isize); 8] = [(0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1)];

fn dir_of(dy: isize, dx: isize) -> usize {
    RING.iter().position(|&d| d == (dy, dx)).expect("neighbour offset")
}

struct Padded {
    f: Vec<i32>,
    w: usize,
}

impl Padded {
    fn at(&self, y: usize, x: usize) -> i32 {
        self.f[y * self.w + x]
    }

    fn set(&mut self, y: usize, x: usize, v: i32) {
        self.f[y * self.w + x] = v;
    }

    fn step(y: usize, x: usize, d: usize) -> (usize, usize) {
        let (dy, dx) = RING[d];
        ((y as isize + dy) as usize, (x as isize + dx) as usize)
    }

    /// Follows the border starting at `(i, j)` whose known zero neighbour is
    /// `(i2, j2)`, marking pixels with `nbd`/`-nbd`. Returns the padded points.
    fn follow(&mut self, i: usize, j: usize, i2: usize, j2: usize, nbd: i32) -> Vec<(usize, usize)> {
        let d0 = dir_of(i2 as isize - i as isize, j2 as isize - j as isize);
        let first = (0..8).map(|k| (d0 + k) % 8).find(|&d| {
            let (y, x) = Self::step(i, j, d);
            self.at(y, x) != 0
        });
        let Some(d1) = first else {
            self.set(i, j, -nbd);
            return vec![(i, j)];
        };
        let p1 = Self::step(i, j, d1);
        let (mut p2, mut p3) = (p1, (i, j));
        let mut points = Vec::new();
        loop {
            let back = dir_of(p2.0 as isize - p3.0 as isize, p2.1 as isize - p3.1 as isize);
            let mut east_zero = false;
            let mut p4 = p2;
            for k in 1..=8 {
                let d = (back + 8 - k) % 8;
                let q = Self::step(p3.0, p3.1, d);
                if self.at(q.0, q.1) != 0 {
                    p4 = q;
                    break;
                }
                if d == 0 {
                    east_zero = true;
                }
            }
            if east_zero {
                self.set(p3.0, p3.1, -nbd);
            } else if self.at(p3.0, p3.1) == 1 {
                self.set(p3.0, p3.1, nbd);
            }
            points.push(p3);
            if p4 == (i, j) && p3 == p1 {
                break;
            }
            p2 = p3;
            p3 = p4;
        }
        points
    }
}

/// 8-connected component label per pixel (0 = background) and component sizes
/// indexed by label - 1.
fn component_labels(b: &BinaryImage) -> (Vec<usize>, Vec<usize>) {
    let (h, w) = b.values.dim();
    let mut parent: Vec<usize> = Vec::new();
    fn find(p: &mut [usize], mut a: usize) -> usize {
        while p[a] != a {
            p[a] = p[p[a]];
            a = p[a];
        }
        a
    }
    let mut lab = vec![0usize; h * w];
    for y in 0..h {
        for x in 0..w {
            if b.values[[y, x]] == 0 {
                continue;
            }
            let mut roots = Vec::with_capacity(4);
            let prev = [(0isize, -1isize), (-1, -1), (-1, 0), (-1, 1)];
            for (dy, dx) in prev {
                let (yy, xx) = (y as isize + dy, x as isize + dx);
                if yy < 0 || xx < 0 || xx >= w as isize {
                    continue;
                }
                let l = lab[yy as usize * w + xx as usize];
                if l > 0 {
                    roots.push(find(&mut parent, l - 1));
                }
            }
            let own = match roots.iter().min() {
                Some(&r) => r,
                None => {
                    parent.push(parent.len());
                    parent.len() - 1
                }
            };
            for r in roots {
                if r != own {
                    let (a, z) = (r.min(own), r.max(own));
                    parent[z] = a;
                }
            }
            lab[y * w + x] = own + 1;
        }
    }
    let mut dense = vec![usize::MAX; parent.len()];
    let mut sizes = Vec::new();
    for l in lab.iter_mut().filter(|l| **l > 0) {
        let r = find(&mut parent, *l - 1);
        if dense[r] == usize::MAX {
            dense[r] = sizes.len();
            sizes.push(0);
        }
        sizes[dense[r]] += 1;
        *l = dense[r] + 1;
    }
    (lab, sizes)
}

/// All borders, outer and hole, in the order their starting pixels are met in
/// a raster scan.
pub fn find_all_contours(b: &BinaryImage) -> Vec<Contour> {
    let (h, w) = b.values.dim();
    let (pw, ph) = (w + 2, h + 2);
    let mut img = Padded {
        f: vec![0; pw * ph],
        w: pw,
    };
    for ((y, x), &v) in b.values.indexed_iter() {
        if v != 0 {
            img.set(y + 1, x + 1, 1);
        }
    }
    let (labels, sizes) = component_labels(b);
    let mut out = Vec::new();
    let mut nbd = 1i32;
    for i in 1..ph - 1 {
        for j in 1..pw - 1 {
            let v = img.at(i, j);
            let start = if v == 1 && img.at(i, j - 1) == 0 {
                Some((true, (i, j - 1)))
            } else if v >= 1 && img.at(i, j + 1) == 0 {
                Some((false, (i, j + 1)))
            } else {
                None
            };
            if let Some((is_outer, (i2, j2))) = start {
                nbd += 1;
                let pts = img.follow(i, j, i2, j2, nbd);
                let comp = labels[(i - 1) * w + (j - 1)];
                out.push(Contour {
                    points: pts.into_iter().map(|(y, x)| ((x - 1) as u32, (y - 1) as u32)).collect(),
                    region_area: sizes[comp - 1],
                    is_outer,
                });
            }
        }
    }
    out
}

/// Outer borders only, one per 8-connected foreground component, ordered by
/// each component's first pixel in raster order.
pub fn find_contours(b: &BinaryImage) -> Vec<Contour> {
    find_all_contours(b).into_iter().filter(|c| c.is_outer).collect()
}

/// Contour with the largest region; the earliest one wins ties.
pub fn largest_contour(cs: &[Contour]) -> Result<&Contour, BoxerError> {
    let mut best: Option<&Contour> = None;
    for c in cs {
        if best.is_none_or(|b| c.region_area > b.region_area) {
            best = Some(c);
        }
    }
    best.ok_or(BoxerError::EmptyContourSet)
}

/// Tight box around the contour's points.
pub fn bounding_rect(c: &Contour) -> BBox {
    let xs = c.points.iter().map(|p| p.0);
    let ys = c.points.iter().map(|p| p.1);
    let (x0, x1) = (xs.clone().min().unwrap_or(0), xs.max().unwrap_or(0));
    let (y0, y1) = (ys.clone().min().unwrap_or(0), ys.max().unwrap_or(0));
    BBox::from_inclusive(x0, y0, x1, y1).expect("ordered corners")
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;

    pub(crate) fn from_rows(rows: &[&str]) -> BinaryImage {
        let h = rows.len();
        let w = rows[0].len();
        BinaryImage {
            values: Array2::from_shape_fn((h, w), |(y, x)| (rows[y].as_bytes()[x] == b'#') as u8),
        }
    }

    /// Flood-fill component: (first raster pixel, area, inclusive extent).
    pub(crate) struct Comp {
        pub first: (usize, usize),
        pub area: usize,
        pub x0: usize,
        pub y0: usize,
        pub x1: usize,
        pub y1: usize,
    }

    pub(crate) fn flood_components(b: &Array2<u8>) -> Vec<Comp> {
        let (h, w) = b.dim();
        let mut seen = Array2::from_elem((h, w), false);
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if b[[y, x]] == 0 || seen[[y, x]] {
                    continue;
                }
                let mut c = Comp {
                    first: (y, x),
                    area: 0,
                    x0: x,
                    y0: y,
                    x1: x,
                    y1: y,
                };
                let mut q = std::collections::VecDeque::from([(y, x)]);
                seen[[y, x]] = true;
                while let Some((cy, cx)) = q.pop_front() {
                    c.area += 1;
                    c.x0 = c.x0.min(cx);
                    c.x1 = c.x1.max(cx);
                    c.y0 = c.y0.min(cy);
                    c.y1 = c.y1.max(cy);
                    for ny in cy.saturating_sub(1)..=(cy + 1).min(h - 1) {
                        for nx in cx.saturating_sub(1)..=(cx + 1).min(w - 1) {
                            if b[[ny, nx]] == 1 && !seen[[ny, nx]] {
                                seen[[ny, nx]] = true;
                                q.push_back((ny, nx));
                            }
                        }
                    }
                }
                out.push(c);
            }
        }
        out
    }

    fn is_closed_chain(pts: &[(u32, u32)]) -> bool {
        let adj =
            |a: (u32, u32), b: (u32, u32)| (a.0 as i64 - b.0 as i64).abs() <= 1 && (a.1 as i64 - b.1 as i64).abs() <= 1;
        pts.windows(2).all(|p| adj(p[0], p[1])) && adj(pts[0], pts[pts.len() - 1])
    }

    #[test]
    fn empty_image_has_no_contours() {
        let b = BinaryImage {
            values: Array2::zeros((5, 5)),
        };
        assert!(find_contours(&b).is_empty());
        assert!(matches!(largest_contour(&[]), Err(BoxerError::EmptyContourSet)));
    }

    #[test]
    fn single_block() {
        let mut v = Array2::zeros((8, 8));
        for y in 2..5 {
            for x in 2..5 {
                v[[y, x]] = 1;
            }
        }
        let cs = find_contours(&BinaryImage { values: v });
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].region_area, 9);
        assert_eq!(bounding_rect(&cs[0]), BBox::new(2, 2, 3, 3).unwrap());
        // the 8 border pixels of a 3x3 block
        assert_eq!(cs[0].points.len(), 8);
        assert!(is_closed_chain(&cs[0].points));
    }

    #[test]
    fn single_pixel() {
        let mut v = Array2::zeros((6, 9));
        v[[4, 7]] = 1;
        let cs = find_contours(&BinaryImage { values: v });
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].points, [(7, 4)]);
        assert_eq!(bounding_rect(&cs[0]), BBox::new(7, 4, 1, 1).unwrap());
    }

    #[test]
    fn l_shape_extent() {
        let b = from_rows(&["........", ".#......", ".#......", ".#......", ".######.", "........"]);
        let cs = find_contours(&b);
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].region_area, 9);
        assert_eq!(bounding_rect(&cs[0]), BBox::new(1, 1, 6, 4).unwrap());
    }

    #[test]
    fn two_blocks_areas_and_largest() {
        let mut v = Array2::zeros((20, 20));
        for y in 1..4 {
            for x in 1..4 {
                v[[y, x]] = 1;
            }
        }
        for y in 10..15 {
            for x in 8..13 {
                v[[y, x]] = 1;
            }
        }
        let cs = find_contours(&BinaryImage { values: v });
        let mut areas: Vec<usize> = cs.iter().map(|c| c.region_area).collect();
        areas.sort();
        assert_eq!(areas, [9, 25]);
        let big = largest_contour(&cs).unwrap();
        assert_eq!(bounding_rect(big), BBox::new(8, 10, 5, 5).unwrap());
    }

    #[test]
    fn ties_resolve_to_first_in_raster_order() {
        let b = from_rows(&["......###", "###...###", "###...###", "###......"]);
        let cs = find_contours(&b);
        assert_eq!(cs.len(), 2);
        let pick = largest_contour(&cs).unwrap();
        // the right block's top-left pixel (6,0) precedes the left block's (0,1)
        assert_eq!(bounding_rect(pick), BBox::new(6, 0, 3, 3).unwrap());
    }

    #[test]
    fn ring_has_outer_and_hole_border() {
        let b = from_rows(&[".......", ".#####.", ".#...#.", ".#...#.", ".#####.", "......."]);
        let all = find_all_contours(&b);
        assert_eq!(all.iter().filter(|c| c.is_outer).count(), 1);
        assert_eq!(all.iter().filter(|c| !c.is_outer).count(), 1);
        assert!(all.iter().all(|c| c.region_area == 14));
        let outer = &find_contours(&b)[0];
        assert_eq!(bounding_rect(outer), BBox::new(1, 1, 5, 4).unwrap());
    }

    #[test]
    fn nested_component_inside_hole() {
        let b = from_rows(&["#######", "#.....#", "#..#..#", "#.....#", "#######"]);
        let cs = find_contours(&b);
        assert_eq!(cs.len(), 2);
        assert_eq!(cs[0].region_area, 20);
        assert_eq!(cs[1].region_area, 1);
        assert_eq!(cs[1].points, [(3, 2)]);
    }

    fn arb_image() -> impl Strategy<Value = Array2<u8>> {
        (1usize..20, 1usize..20, 0.05f64..0.8, any::<u64>()).prop_map(|(h, w, p, seed)| {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            Array2::from_shape_fn((h, w), |_| rng.random_bool(p) as u8)
        })
    }

    proptest! {
        #[test]
        fn outer_contours_match_flood_fill(v in arb_image()) {
            let comps = flood_components(&v);
            let cs = find_contours(&BinaryImage { values: v.clone() });
            prop_assert_eq!(cs.len(), comps.len());
            for (c, o) in cs.iter().zip(comps.iter()) {
                prop_assert_eq!(c.region_area, o.area);
                let want = BBox::from_inclusive(o.x0 as u32, o.y0 as u32, o.x1 as u32, o.y1 as u32).unwrap();
                prop_assert_eq!(bounding_rect(c), want);
                prop_assert!(is_closed_chain(&c.points));
                let fx = c.points[0];
                prop_assert_eq!((fx.1 as usize, fx.0 as usize), o.first);
            }
        }
    }
}
