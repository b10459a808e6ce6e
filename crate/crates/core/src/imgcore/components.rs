use super::BinaryMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

/// One labeled region. Bounding box is inclusive in pixel indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub label: u32,
    pub min_x: usize,
    pub min_y: usize,
    pub max_x: usize,
    pub max_y: usize,
    pub area: usize,
}

/// Label image (0 = background, regions numbered 1..=K in raster-scan order
/// of their first pixel) plus per-region statistics.
#[derive(Debug, Clone)]
pub struct Components {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u32>,
    pub regions: Vec<Region>,
}

impl Components {
    pub fn label(&self, y: usize, x: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    /// Mask of the pixels carrying `label`.
    pub fn mask_of(&self, label: u32) -> BinaryMask {
        BinaryMask::new(
            self.height,
            self.width,
            self.labels.iter().map(|l| *l == label).collect(),
        )
        .expect("label image has mask dimensions")
    }
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        parent[x as usize] = parent[parent[x as usize] as usize];
        x = parent[x as usize];
    }
    x
}

fn union(parent: &mut [u32], a: u32, b: u32) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi as usize] = lo;
    }
}

/// Two-pass union-find labeling.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> Components {
    let (h, w) = (mask.height(), mask.width());
    let mut labels = vec![0u32; h * w];
    let mut parent: Vec<u32> = vec![0];

    let back: &[(isize, isize)] = match connectivity {
        Connectivity::Four => &[(-1, 0), (0, -1)],
        Connectivity::Eight => &[(-1, -1), (-1, 0), (-1, 1), (0, -1)],
    };

    for y in 0..h {
        for x in 0..w {
            if !mask.get(y, x) {
                continue;
            }
            let mut current = 0u32;
            for &(dy, dx) in back {
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                if ny < 0 || nx < 0 || nx >= w as isize {
                    continue;
                }
                let l = labels[ny as usize * w + nx as usize];
                if l == 0 {
                    continue;
                }
                if current == 0 {
                    current = l;
                } else {
                    union(&mut parent, current, l);
                }
            }
            if current == 0 {
                current = parent.len() as u32;
                parent.push(current);
            }
            labels[y * w + x] = current;
        }
    }

    // Compact roots to 1..=K in scan order.
    let mut remap = vec![0u32; parent.len()];
    let mut regions: Vec<Region> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let l = labels[y * w + x];
            if l == 0 {
                continue;
            }
            let root = find(&mut parent, l) as usize;
            if remap[root] == 0 {
                regions.push(Region {
                    label: regions.len() as u32 + 1,
                    min_x: x,
                    min_y: y,
                    max_x: x,
                    max_y: y,
                    area: 0,
                });
                remap[root] = regions.len() as u32;
            }
            let label = remap[root];
            labels[y * w + x] = label;
            let r = &mut regions[label as usize - 1];
            r.min_x = r.min_x.min(x);
            r.max_x = r.max_x.max(x);
            r.min_y = r.min_y.min(y);
            r.max_y = r.max_y.max(y);
            r.area += 1;
        }
    }

    Components {
        height: h,
        width: w,
        labels,
        regions,
    }
}
