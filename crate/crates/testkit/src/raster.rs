//! IoU by counting cells on an integer raster.

/// Raster side in cells.
pub const GRID: usize = 1000;
const WORDS: usize = GRID.div_ceil(64);

/// Box with integer corners on the raster, half-open: covers cells
/// `x1..x2` by `y1..y2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridBox {
    pub x1: usize,
    pub y1: usize,
    pub x2: usize,
    pub y2: usize,
}

fn row_mask(x1: usize, x2: usize) -> [u64; WORDS] {
    let mut m = [0u64; WORDS];
    for x in x1..x2 {
        m[x / 64] |= 1 << (x % 64);
    }
    m
}

/// Counts covered cells of the intersection and union, row by row.
pub fn raster_counts(a: GridBox, b: GridBox) -> (u64, u64) {
    let ma = row_mask(a.x1, a.x2);
    let mb = row_mask(b.x1, b.x2);
    let empty = [0u64; WORDS];
    let (mut inter, mut union) = (0u64, 0u64);
    for y in 0..GRID {
        let ra = if (a.y1..a.y2).contains(&y) { &ma } else { &empty };
        let rb = if (b.y1..b.y2).contains(&y) { &mb } else { &empty };
        for w in 0..WORDS {
            inter += u64::from((ra[w] & rb[w]).count_ones());
            union += u64::from((ra[w] | rb[w]).count_ones());
        }
    }
    (inter, union)
}

pub fn raster_iou(a: GridBox, b: GridBox) -> f64 {
    let (inter, union) = raster_counts(a, b);
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}
