use std::fmt::Write as _;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ConvParams, Padding};
use crate::torus::{CoreId, MAX_CORES};

/// How a convolution input is split: `grid_h × grid_w` spatial tiles, each
/// replicated over `batch_splits` batch slices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShardSpec {
    pub grid_h: usize,
    pub grid_w: usize,
    #[serde(default = "one")]
    pub batch_splits: usize,
}

fn one() -> usize {
    1
}

impl ShardSpec {
    pub fn spatial(grid_h: usize, grid_w: usize) -> Self {
        Self { grid_h, grid_w, batch_splits: 1 }
    }

    pub fn num_cores(&self) -> usize {
        self.grid_h * self.grid_w * self.batch_splits
    }

    fn checked_cores(&self) -> Option<usize> {
        self.grid_h.checked_mul(self.grid_w)?.checked_mul(self.batch_splits).filter(|&n| n <= MAX_CORES)
    }

    /// Core id of grid cell `(batch slice, tile row, tile col)`.
    pub fn core_of(&self, b: usize, gr: usize, gc: usize) -> CoreId {
        (b * self.grid_h + gr) * self.grid_w + gc
    }
}

/// Rows/columns added on each side of a tile.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HaloSpec {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl HaloSpec {
    pub fn max_width(&self) -> usize {
        self.top.max(self.bottom).max(self.left).max(self.right)
    }

    pub fn is_zero(&self) -> bool {
        self.max_width() == 0
    }
}

/// Whether an axis is tiled across the grid or every core sees all of it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AxisMode {
    Split,
    /// The extent is smaller than the grid: the whole extent is computed on
    /// every core along this axis and only grid index 0 contributes output.
    Replicated,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorePlan {
    pub core: CoreId,
    /// `(batch slice, tile row, tile col)`.
    pub cell: (usize, usize, usize),
    pub batch: Range<usize>,
    pub rows: Range<usize>,
    pub cols: Range<usize>,
    /// Widths received from neighbouring tiles.
    pub halo: HaloSpec,
    /// Zero padding at global tensor boundaries.
    pub pad: HaloSpec,
    pub out_rows: Range<usize>,
    pub out_cols: Range<usize>,
    pub owns_output: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionPlan {
    pub input_shape: [usize; 4],
    pub output_shape: [usize; 4],
    pub params: ConvParams,
    pub spec: ShardSpec,
    pub row_mode: AxisMode,
    pub col_mode: AxisMode,
    pub cores: Vec<CorePlan>,
}

impl PartitionPlan {
    pub fn is_replicated(&self) -> bool {
        self.row_mode == AxisMode::Replicated || self.col_mode == AxisMode::Replicated
    }

    pub fn core(&self, core: CoreId) -> &CorePlan {
        &self.cores[core]
    }

    /// Human-readable table, one row per core.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let [n, h, w, c] = self.input_shape;
        let _ = writeln!(
            s,
            "# input {n}x{h}x{w}x{c}  kernel {}  stride {}  padding {:?}  grid {}x{}x{}  rows {:?}  cols {:?}",
            self.params.kernel_size,
            self.params.stride,
            self.params.padding,
            self.spec.batch_splits,
            self.spec.grid_h,
            self.spec.grid_w,
            self.row_mode,
            self.col_mode
        );
        let _ = writeln!(s, "core\tbatch\trows\tcols\thalo(t,b,l,r)\tpad(t,b,l,r)\tout_rows\tout_cols\towns");
        for p in &self.cores {
            let _ = writeln!(
                s,
                "{}\t{:?}\t{:?}\t{:?}\t{},{},{},{}\t{},{},{},{}\t{:?}\t{:?}\t{}",
                p.core,
                p.batch,
                p.rows,
                p.cols,
                p.halo.top,
                p.halo.bottom,
                p.halo.left,
                p.halo.right,
                p.pad.top,
                p.pad.bottom,
                p.pad.left,
                p.pad.right,
                p.out_rows,
                p.out_cols,
                p.owns_output
            );
        }
        s
    }
}

#[derive(Clone, Debug)]
struct AxisTile {
    input: Range<usize>,
    halo: (usize, usize),
    pad: (usize, usize),
    out: Range<usize>,
    owns: bool,
}

fn plan_axis(extent: usize, parts: usize, params: &ConvParams, axis: &'static str) -> Result<(AxisMode, Vec<AxisTile>)> {
    let out_extent = params
        .output_extent(extent)
        .ok_or_else(|| Error::Plan { axis, detail: format!("extent {extent} smaller than kernel {}", params.kernel_size) })?;
    if parts == 0 {
        return Err(Error::Plan { axis, detail: "grid extent must be positive".into() });
    }
    let whole = |owns| AxisTile { input: 0..extent, halo: (0, 0), pad: params.padding_for(extent), out: 0..out_extent, owns };
    if parts == 1 {
        return Ok((AxisMode::Split, vec![whole(true)]));
    }
    if extent < parts {
        return Ok((AxisMode::Replicated, (0..parts).map(|i| whole(i == 0)).collect()));
    }
    if !extent.is_multiple_of(parts) {
        return Err(Error::Plan { axis, detail: format!("extent {extent} not divisible by {parts} tiles") });
    }
    let h = extent / parts;
    let (k, s) = (params.kernel_size, params.stride);
    let tiles = match params.padding {
        Padding::Same => {
            if !h.is_multiple_of(s) {
                return Err(Error::Plan { axis, detail: format!("tile extent {h} not aligned to stride {s}") });
            }
            let (before, after) = params.padding_for(extent);
            if before > h || after > h {
                return Err(Error::Plan { axis, detail: format!("halo {before}/{after} exceeds tile extent {h}") });
            }
            (0..parts)
                .map(|i| {
                    let first = i == 0;
                    let last = i == parts - 1;
                    AxisTile {
                        input: i * h..(i + 1) * h,
                        halo: (if first { 0 } else { before }, if last { 0 } else { after }),
                        pad: (if first { before } else { 0 }, if last { after } else { 0 }),
                        out: i * h / s..(i + 1) * h / s,
                        owns: true,
                    }
                })
                .collect()
        }
        Padding::Valid => {
            if s != 1 {
                return Err(Error::Plan { axis, detail: format!("VALID padding with stride {s} cannot be tiled exactly") });
            }
            let r = k / 2;
            if h <= r {
                return Err(Error::Plan { axis, detail: format!("tile extent {h} too small for kernel {k}") });
            }
            // Output pixel `o` is centred on input pixel `o + r`; a tile owns
            // the outputs whose centres it holds.
            (0..parts)
                .map(|i| {
                    let first = i == 0;
                    let last = i == parts - 1;
                    let lo = (i * h).max(r) - r;
                    let hi = ((i + 1) * h).min(extent - r) - r;
                    AxisTile {
                        input: i * h..(i + 1) * h,
                        halo: (if first { 0 } else { r }, if last { 0 } else { r }),
                        pad: (0, 0),
                        out: lo..hi,
                        owns: true,
                    }
                })
                .collect()
        }
    };
    Ok((AxisMode::Split, tiles))
}

/// Splits an NHWC convolution input over a core grid.
///
/// Tiles cover the input exactly once. Interior edges receive halos of
/// `floor(K/2)` for stride-1 convolutions; global edges get the zero padding
/// the monolithic convolution would use. An axis smaller than its grid
/// extent falls back to replication.
pub fn plan_partition(input_shape: [usize; 4], params: &ConvParams, spec: &ShardSpec) -> Result<PartitionPlan> {
    params.validate()?;
    let [n, h, w, c] = input_shape;
    if c != params.in_channels {
        return Err(Error::Plan { axis: "channels", detail: format!("input has {c} channels, params say {}", params.in_channels) });
    }
    if spec.checked_cores().is_none() {
        return Err(Error::Plan { axis: "grid", detail: format!("{spec:?} exceeds {MAX_CORES} cores") });
    }
    if spec.batch_splits == 0 || n < spec.batch_splits || n % spec.batch_splits != 0 {
        return Err(Error::Plan { axis: "batch", detail: format!("batch {n} not divisible into {} splits", spec.batch_splits) });
    }
    let (row_mode, row_tiles) = plan_axis(h, spec.grid_h, params, "height")?;
    let (col_mode, col_tiles) = plan_axis(w, spec.grid_w, params, "width")?;
    let nb = n / spec.batch_splits;
    let mut cores = Vec::with_capacity(spec.num_cores());
    for b in 0..spec.batch_splits {
        for (gr, rt) in row_tiles.iter().enumerate() {
            for (gc, ct) in col_tiles.iter().enumerate() {
                cores.push(CorePlan {
                    core: spec.core_of(b, gr, gc),
                    cell: (b, gr, gc),
                    batch: b * nb..(b + 1) * nb,
                    rows: rt.input.clone(),
                    cols: ct.input.clone(),
                    halo: HaloSpec { top: rt.halo.0, bottom: rt.halo.1, left: ct.halo.0, right: ct.halo.1 },
                    pad: HaloSpec { top: rt.pad.0, bottom: rt.pad.1, left: ct.pad.0, right: ct.pad.1 },
                    out_rows: rt.out.clone(),
                    out_cols: ct.out.clone(),
                    owns_output: rt.owns && ct.owns,
                });
            }
        }
    }
    let output_shape = [n, params.output_extent(h).unwrap_or(0), params.output_extent(w).unwrap_or(0), params.out_channels];
    Ok(PartitionPlan { input_shape, output_shape, params: *params, spec: *spec, row_mode, col_mode, cores })
}
