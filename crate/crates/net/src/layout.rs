//! Row-gather indices that move tokens between the canonical
//! `(image, y, x)` order and the groups each attention unit works on.

use std::sync::Arc;

/// Token grid of `batch·slices` images of `height×width` tokens, stored in
/// `(batch, slice, y, x)` row-major order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    pub batch: usize,
    pub slices: usize,
    pub height: usize,
    pub width: usize,
}

impl Grid {
    pub fn images(&self) -> usize {
        self.batch * self.slices
    }

    pub fn tokens(&self) -> usize {
        self.images() * self.height * self.width
    }

    pub fn half(&self) -> Grid {
        Grid {
            height: self.height / 2,
            width: self.width / 2,
            ..*self
        }
    }

    fn at(&self, image: usize, y: usize, x: usize) -> u32 {
        ((image * self.height + y) * self.width + x) as u32
    }
}

/// Gather that arranges tokens into contiguous groups of `len`, plus its inverse.
#[derive(Debug, Clone)]
pub struct Grouping {
    pub perm: Arc<[u32]>,
    pub inverse: Arc<[u32]>,
    pub len: usize,
}

impl Grouping {
    fn from_perm(perm: Vec<u32>, len: usize) -> Self {
        let mut inverse = vec![0u32; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p as usize] = i as u32;
        }
        Self {
            perm: perm.into(),
            inverse: inverse.into(),
            len,
        }
    }

    /// Tokens of each `window×window` block of each image.
    pub fn local(grid: Grid, window: usize) -> Self {
        assert!(grid.height % window == 0 && grid.width % window == 0, "grid not tiled by window");
        let mut perm = Vec::with_capacity(grid.tokens());
        for img in 0..grid.images() {
            for wy in 0..grid.height / window {
                for wx in 0..grid.width / window {
                    for iy in 0..window {
                        for ix in 0..window {
                            perm.push(grid.at(img, wy * window + iy, wx * window + ix));
                        }
                    }
                }
            }
        }
        Self::from_perm(perm, window * window)
    }

    /// Tokens sharing an intra-window position, one from every window of an image.
    pub fn global(grid: Grid, window: usize) -> Self {
        assert!(grid.height % window == 0 && grid.width % window == 0, "grid not tiled by window");
        let (ny, nx) = (grid.height / window, grid.width / window);
        let mut perm = Vec::with_capacity(grid.tokens());
        for img in 0..grid.images() {
            for iy in 0..window {
                for ix in 0..window {
                    for wy in 0..ny {
                        for wx in 0..nx {
                            perm.push(grid.at(img, wy * window + iy, wx * window + ix));
                        }
                    }
                }
            }
        }
        Self::from_perm(perm, ny * nx)
    }

    /// Tokens at one spatial location across the slices of a batch item.
    pub fn slice(grid: Grid) -> Self {
        let mut perm = Vec::with_capacity(grid.tokens());
        for b in 0..grid.batch {
            for y in 0..grid.height {
                for x in 0..grid.width {
                    for t in 0..grid.slices {
                        perm.push(grid.at(b * grid.slices + t, y, x));
                    }
                }
            }
        }
        Self::from_perm(perm, grid.slices)
    }
}

/// Whole-sample symmetric reflection (no edge repeat), as in `numpy.pad(mode="reflect")`.
pub fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

/// Rows of the `[images·H·W, 2]` input feeding each patch element after
/// reflect padding to `padded_h×padded_w`, ordered token-major then
/// `(py, px)` within the patch.
pub fn patch_index(images: usize, h: usize, w: usize, padded_h: usize, padded_w: usize, patch: usize) -> Arc<[u32]> {
    let (th, tw) = (padded_h / patch, padded_w / patch);
    let mut idx = Vec::with_capacity(images * padded_h * padded_w);
    for img in 0..images {
        for ty in 0..th {
            for tx in 0..tw {
                for py in 0..patch {
                    for px in 0..patch {
                        let r = reflect(ty * patch + py, h);
                        let c = reflect(tx * patch + px, w);
                        idx.push(((img * h + r) * w + c) as u32);
                    }
                }
            }
        }
    }
    idx.into()
}

/// Inverse of [`patch_index`] restricted to the unpadded region: for each
/// output pixel, the row of the `[tokens·patch², 2]` head output.
pub fn unpatch_index(images: usize, h: usize, w: usize, padded_h: usize, padded_w: usize, patch: usize) -> Arc<[u32]> {
    let (th, tw) = (padded_h / patch, padded_w / patch);
    let mut idx = Vec::with_capacity(images * h * w);
    for img in 0..images {
        for r in 0..h {
            for c in 0..w {
                let token = (img * th + r / patch) * tw + c / patch;
                idx.push((token * patch * patch + (r % patch) * patch + c % patch) as u32);
            }
        }
    }
    idx.into()
}

/// Intra-window position of every token, indexing the positional table.
pub fn position_index(grid: Grid, window: usize) -> Arc<[u32]> {
    let mut idx = Vec::with_capacity(grid.tokens());
    for _ in 0..grid.images() {
        for y in 0..grid.height {
            for x in 0..grid.width {
                idx.push(((y % window) * window + x % window) as u32);
            }
        }
    }
    idx.into()
}

/// Top-left token of every 2×2 block (stride-2 subsampling).
pub fn subsample_index(grid: Grid) -> Arc<[u32]> {
    let half = grid.half();
    let mut idx = Vec::with_capacity(half.tokens());
    for img in 0..grid.images() {
        for y in 0..half.height {
            for x in 0..half.width {
                idx.push(grid.at(img, 2 * y, 2 * x));
            }
        }
    }
    idx.into()
}
