//! Marching-cubes triangulation of the 0.5 iso-surface of a binary mask.
//!
//! Instead of the usual 256-case lookup table the polygons of each cell are
//! built directly: every cube face contributes the segments joining its
//! crossing edges, the segments chain into closed loops, and each loop is
//! oriented outward and fan-triangulated. On a face with two diagonally
//! opposite foreground corners the foreground corners are cut off
//! separately. The decision depends only on the face itself, so
//! neighbouring cells agree and the mesh is closed.

use crate::volume::Mask;

pub type Point = [f64; 3];

#[derive(Debug, Clone, Default)]
pub struct TriMesh {
    pub triangles: Vec<[Point; 3]>,
}

impl TriMesh {
    pub fn surface_area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|[a, b, c]| 0.5 * norm(cross(sub(*b, *a), sub(*c, *a))))
            .sum()
    }

    /// Enclosed volume as the sum of signed tetrahedra against the origin.
    pub fn volume(&self) -> f64 {
        let signed: f64 = self
            .triangles
            .iter()
            .map(|[a, b, c]| dot(*a, cross(*b, *c)))
            .sum();
        (signed / 6.0).abs()
    }
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: Point, b: Point) -> Point {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: Point) -> f64 {
    dot(a, a).sqrt()
}

/// Corner `c` of a cell sits at offset `(c & 1, c >> 1 & 1, c >> 2 & 1)`.
const fn corner_offset(c: usize) -> [usize; 3] {
    [c & 1, (c >> 1) & 1, (c >> 2) & 1]
}

/// The 12 cell edges as corner pairs.
const EDGES: [(usize, usize); 12] = [
    (0, 1),
    (2, 3),
    (4, 5),
    (6, 7),
    (0, 2),
    (1, 3),
    (4, 6),
    (5, 7),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

/// Each face as its corners in cyclic order.
const FACES: [[usize; 4]; 6] = [
    [0, 2, 6, 4], // x = 0
    [1, 3, 7, 5], // x = 1
    [0, 1, 5, 4], // y = 0
    [2, 3, 7, 6], // y = 1
    [0, 1, 3, 2], // z = 0
    [4, 5, 7, 6], // z = 1
];

fn edge_index(a: usize, b: usize) -> usize {
    let (a, b) = if a < b { (a, b) } else { (b, a) };
    EDGES
        .iter()
        .position(|&e| e == (a, b))
        .expect("corners are not adjacent")
}

/// Loops of crossing edges for one corner configuration (bit `c` set when
/// corner `c` is foreground).
fn cell_loops(config: u8) -> Vec<Vec<usize>> {
    let inside = |c: usize| config >> c & 1 == 1;
    // two neighbours per crossing edge
    let mut links: [Vec<usize>; 12] = Default::default();
    for face in FACES {
        let crossing: Vec<(usize, usize)> = (0..4)
            .filter_map(|i| {
                let (a, b) = (face[i], face[(i + 1) % 4]);
                (inside(a) != inside(b)).then_some((i, edge_index(a, b)))
            })
            .collect();
        let mut pair = |e1: usize, e2: usize| {
            links[e1].push(e2);
            links[e2].push(e1);
        };
        match crossing.len() {
            0 => {}
            2 => pair(crossing[0].1, crossing[1].1),
            4 => {
                // face-edge i joins corners i and i+1; cut each foreground
                // corner off on its own
                let start = if inside(face[1]) { 0 } else { 1 };
                pair(crossing[start].1, crossing[start + 1].1);
                pair(crossing[(start + 2) % 4].1, crossing[(start + 3) % 4].1);
            }
            _ => unreachable!("odd number of crossings on a face"),
        }
    }
    let mut visited = [false; 12];
    let mut loops = Vec::new();
    for start in 0..12 {
        if visited[start] || links[start].is_empty() {
            continue;
        }
        let mut cycle = vec![start];
        visited[start] = true;
        let mut prev = start;
        let mut cur = links[start][0];
        while cur != start {
            visited[cur] = true;
            cycle.push(cur);
            let next = if links[cur][0] == prev { links[cur][1] } else { links[cur][0] };
            prev = cur;
            cur = next;
        }
        loops.push(cycle);
    }
    loops
}

/// Builds the 256 per-configuration loop lists once.
fn loop_table() -> Vec<Vec<Vec<usize>>> {
    (0..=255u8).map(cell_loops).collect()
}

/// Triangulates the 0.5 iso-surface of `mask` in physical coordinates (mm)
/// relative to the lowest corner of the foreground bounding box, so the
/// mesh is bit-identical under grid translation. Space outside the grid
/// counts as background and the mesh is always closed.
pub fn marching_cubes(mask: &Mask) -> TriMesh {
    let Some((lo, hi)) = mask.bounding_box() else {
        return TriMesh::default();
    };
    let sp = mask.spacing();
    let table = loop_table();
    let mut triangles = Vec::new();
    let (lo, hi) = (lo.map(|v| v as isize), hi.map(|v| v as isize));
    for z in lo[2] - 1..=hi[2] {
        for y in lo[1] - 1..=hi[1] {
            for x in lo[0] - 1..=hi[0] {
                let mut config = 0u8;
                for c in 0..8 {
                    let o = corner_offset(c);
                    if mask.get_signed(x + o[0] as isize, y + o[1] as isize, z + o[2] as isize) {
                        config |= 1 << c;
                    }
                }
                if config == 0 || config == 255 {
                    continue;
                }
                let corner_pos = |c: usize| -> Point {
                    let o = corner_offset(c);
                    [
                        (x + o[0] as isize - lo[0]) as f64 * sp[0],
                        (y + o[1] as isize - lo[1]) as f64 * sp[1],
                        (z + o[2] as isize - lo[2]) as f64 * sp[2],
                    ]
                };
                for lp in &table[config as usize] {
                    let mut verts: Vec<Point> = Vec::with_capacity(lp.len());
                    let mut outward = [0.0; 3];
                    for &e in lp {
                        let (a, b) = EDGES[e];
                        let (pa, pb) = (corner_pos(a), corner_pos(b));
                        verts.push([
                            0.5 * (pa[0] + pb[0]),
                            0.5 * (pa[1] + pb[1]),
                            0.5 * (pa[2] + pb[2]),
                        ]);
                        let d = if config >> a & 1 == 1 { sub(pb, pa) } else { sub(pa, pb) };
                        outward = [outward[0] + d[0], outward[1] + d[1], outward[2] + d[2]];
                    }
                    // Newell normal of the loop
                    let mut normal = [0.0; 3];
                    for i in 0..verts.len() {
                        let (p, q) = (verts[i], verts[(i + 1) % verts.len()]);
                        normal[0] += (p[1] - q[1]) * (p[2] + q[2]);
                        normal[1] += (p[2] - q[2]) * (p[0] + q[0]);
                        normal[2] += (p[0] - q[0]) * (p[1] + q[1]);
                    }
                    if dot(normal, outward) < 0.0 {
                        verts.reverse();
                    }
                    for i in 1..verts.len() - 1 {
                        triangles.push([verts[0], verts[i], verts[i + 1]]);
                    }
                }
            }
        }
    }
    TriMesh { triangles }
}
