//! Critic level sets rendered as binary portable pixmaps, plus run artifacts.
//!
//! The background is the critic value normalized to `[0, 1]` over the grid
//! (bright = high). Overlays are drawn as 3x3 squares: training samples
//! yellow, generated samples green, penalty points red (in that order).
//! Convert with e.g. `convert levelset_500.ppm levelset_500.png`.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::data::Batch2D;
use crate::error::{Error, Result};
use crate::nets::MlpParams;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::trainer::{write_log_csv, TrainRecord};

pub const DEFAULT_RESOLUTION: usize = 128;
const EVAL_CHUNK: usize = 1024;

pub const YELLOW: [u8; 3] = [255, 255, 0];
pub const GREEN: [u8; 3] = [0, 255, 0];
pub const RED: [u8; 3] = [255, 0, 0];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Default for BBox {
    fn default() -> Self {
        BBox { x_min: -2.0, x_max: 2.0, y_min: -2.0, y_max: 2.0 }
    }
}

impl BBox {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.x_max, self.y_min, self.y_max].iter().all(|v| v.is_finite());
        if finite && self.x_max > self.x_min && self.y_max > self.y_min {
            Ok(())
        } else {
            Err(Error::invalid(format!("degenerate bounding box {self:?}")))
        }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        (self.x_min..=self.x_max).contains(&p[0]) && (self.y_min..=self.y_max).contains(&p[1])
    }
}

/// `i`-th of `n` evenly spaced values from `lo` to `hi`, both ends exact.
fn lerp_index(lo: f64, hi: f64, i: usize, n: usize) -> f64 {
    if i + 1 == n {
        hi
    } else {
        lo + (hi - lo) * (i as f64 / (n - 1) as f64)
    }
}

/// Critic values on a regular grid; row `j` is the `j`-th y coordinate from
/// `y_min`, column `i` the `i`-th x coordinate from `x_min`.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelSetGrid<T> {
    pub bbox: BBox,
    pub nx: usize,
    pub ny: usize,
    /// `[ny, nx]`
    pub values: Tensor<T>,
}

impl<T: Scalar> LevelSetGrid<T> {
    pub fn point(&self, row: usize, col: usize) -> [f64; 2] {
        [
            lerp_index(self.bbox.x_min, self.bbox.x_max, col, self.nx),
            lerp_index(self.bbox.y_min, self.bbox.y_max, row, self.ny),
        ]
    }

    pub fn value(&self, row: usize, col: usize) -> T {
        self.values.at(row, col)
    }
}

/// Evaluates `critic` at every grid point, corners included.
pub fn level_set_grid<T: Scalar>(
    critic: &MlpParams<T>,
    bbox: BBox,
    resolution: (usize, usize),
) -> Result<LevelSetGrid<T>> {
    bbox.validate()?;
    let (nx, ny) = resolution;
    if nx < 2 || ny < 2 {
        return Err(Error::invalid(format!("grid resolution must be at least 2x2, got {nx}x{ny}")));
    }
    let mut grid = LevelSetGrid { bbox, nx, ny, values: Tensor::zeros(&[ny, nx]) };
    let coords: Vec<T> = (0..nx * ny)
        .flat_map(|k| grid.point(k / nx, k % nx))
        .map(T::lit)
        .collect();
    let mut values = Vec::with_capacity(nx * ny);
    for chunk in coords.chunks(2 * EVAL_CHUNK) {
        let x = Tensor::new(vec![chunk.len() / 2, 2], chunk.to_vec())?;
        values.extend_from_slice(critic.evaluate(&x)?.data());
    }
    grid.values = Tensor::new(vec![ny, nx], values)?;
    Ok(grid)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FigureOverlay<T> {
    pub training: Option<Batch2D<T>>,
    pub generated: Option<Batch2D<T>>,
    pub penalty: Option<Batch2D<T>>,
}

/// Binary P6 pixmap, `nx` wide and `ny` tall, top row at `y_max`.
pub fn render_figure<T: Scalar>(grid: &LevelSetGrid<T>, overlay: &FigureOverlay<T>) -> Vec<u8> {
    let (w, h) = (grid.nx, grid.ny);
    let vals = grid.values.data();
    let lo = vals.iter().copied().fold(T::infinity(), T::min);
    let hi = vals.iter().copied().fold(T::neg_infinity(), T::max);
    let range = hi - lo;

    let mut pixels = vec![0u8; 3 * w * h];
    for py in 0..h {
        let row = h - 1 - py;
        for px in 0..w {
            let v = grid.value(row, px);
            let level = if range > T::zero() { ((v - lo) / range).to_f64().unwrap_or(0.5) } else { 0.5 };
            let g = (level * 255.0).round().clamp(0.0, 255.0) as u8;
            pixels[3 * (py * w + px)..3 * (py * w + px) + 3].copy_from_slice(&[g, g, g]);
        }
    }

    let bbox = grid.bbox;
    let layers = [(&overlay.training, YELLOW), (&overlay.generated, GREEN), (&overlay.penalty, RED)];
    for (batch, color) in layers {
        let Some(batch) = batch else { continue };
        for p in batch.iter() {
            let p = [p[0].to_f64().unwrap_or(f64::NAN), p[1].to_f64().unwrap_or(f64::NAN)];
            if !bbox.contains(p) {
                continue;
            }
            let cx = ((p[0] - bbox.x_min) / (bbox.x_max - bbox.x_min) * (w - 1) as f64).round() as i64;
            let cy = ((bbox.y_max - p[1]) / (bbox.y_max - bbox.y_min) * (h - 1) as f64).round() as i64;
            for y in cy - 1..=cy + 1 {
                for x in cx - 1..=cx + 1 {
                    if (0..w as i64).contains(&x) && (0..h as i64).contains(&y) {
                        let k = 3 * (y as usize * w + x as usize);
                        pixels[k..k + 3].copy_from_slice(&color);
                    }
                }
            }
        }
    }

    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(&pixels);
    out
}

/// Parsed P6 image: `(width, height, rgb bytes)`.
pub fn parse_ppm(bytes: &[u8]) -> Result<(usize, usize, &[u8])> {
    let bad = || Error::Format("not a binary P6 pixmap".into());
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad())?);
    }
    pos += 1;
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad());
    if fields[0] != "P6" || num(fields[3])? != 255 {
        return Err(bad());
    }
    let (w, h) = (num(fields[1])?, num(fields[2])?);
    let rgb = bytes.get(pos..).filter(|r| r.len() == 3 * w * h).ok_or_else(bad)?;
    Ok((w, h, rgb))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Figure {
    pub iteration: usize,
    pub ppm: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointFile {
    pub iteration: usize,
    pub bytes: Vec<u8>,
}

/// Files written by [`write_run_artifacts`], with byte sizes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<(String, u64)>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(name, size)| format!("{name}\t{size}\n")).collect()
    }
}

/// Writes `log.csv`, `levelset_{iter}.ppm`, `ckpt_{iter}`, `abort.txt` (when
/// given) and a `manifest.txt` listing them as `name<TAB>bytes`.
pub fn write_run_artifacts(
    log: &[TrainRecord],
    figures: &[Figure],
    checkpoints: &[CheckpointFile],
    abort: Option<&str>,
    out_dir: &Path,
) -> Result<Manifest> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut manifest = Manifest::default();
    let mut put = |name: String, bytes: &[u8]| -> Result<()> {
        let path = out_dir.join(&name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        manifest.entries.push((name, bytes.len() as u64));
        Ok(())
    };

    let mut csv = Vec::new();
    write_log_csv(&mut csv, log).expect("writing to memory");
    put("log.csv".into(), &csv)?;
    for f in figures {
        put(format!("levelset_{}.ppm", f.iteration), &f.ppm)?;
    }
    for c in checkpoints {
        put(format!("ckpt_{}", c.iteration), &c.bytes)?;
    }
    if let Some(msg) = abort {
        put("abort.txt".into(), format!("{msg}\n").as_bytes())?;
    }

    let path = out_dir.join("manifest.txt");
    let mut file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    file.write_all(manifest.to_text().as_bytes()).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn affine_critic(a: f64, b: f64, c: f64) -> MlpParams<f64> {
        crate::nets::affine_critic([a, b], c)
    }

    #[test]
    fn constant_critic_gives_equal_values() {
        let g = level_set_grid(&affine_critic(0.0, 0.0, 3.0), BBox::default(), (4, 5)).unwrap();
        assert!(g.values.data().iter().all(|&v| v == 3.0));
        assert_eq!(g.values.shape(), &[5, 4]);
    }

    #[test]
    fn linear_critic_on_3x3() {
        let bbox = BBox { x_min: -1.0, x_max: 1.0, y_min: -1.0, y_max: 1.0 };
        let g = level_set_grid(&affine_critic(1.0, 0.0, 0.0), bbox, (3, 3)).unwrap();
        assert_eq!(g.values.data(), &[-1.0, 0.0, 1.0, -1.0, 0.0, 1.0, -1.0, 0.0, 1.0]);
    }

    #[test]
    fn two_by_two_hits_corners() {
        let bbox = BBox { x_min: -1.5, x_max: 0.5, y_min: 2.0, y_max: 3.0 };
        let g = level_set_grid(&affine_critic(1.0, 10.0, 0.0), bbox, (2, 2)).unwrap();
        assert_eq!(g.point(0, 0), [-1.5, 2.0]);
        assert_eq!(g.point(1, 1), [0.5, 3.0]);
        assert_eq!(g.values.data(), &[18.5, 20.5, 28.5, 30.5]);
    }

    #[test]
    fn invalid_grids() {
        let c = affine_critic(1.0, 0.0, 0.0);
        let flat = BBox { x_min: 1.0, x_max: 1.0, ..BBox::default() };
        assert!(level_set_grid(&c, flat, (3, 3)).is_err());
        assert!(level_set_grid(&c, BBox::default(), (1, 3)).is_err());
    }

    #[test]
    fn constant_grid_renders_mid_gray() {
        let g = level_set_grid(&affine_critic(0.0, 0.0, 1.0), BBox::default(), (6, 4)).unwrap();
        let img = render_figure(&g, &FigureOverlay::default());
        let (w, h, rgb) = parse_ppm(&img).unwrap();
        assert_eq!((w, h), (6, 4));
        assert!(rgb.iter().all(|&b| b == 128));
    }

    #[test]
    fn red_point_at_center() {
        let g = level_set_grid(&affine_critic(0.0, 0.0, 1.0), BBox::default(), (9, 9)).unwrap();
        let overlay = FigureOverlay {
            penalty: Some(Batch2D::from_points(&[[0.0, 0.0]]).unwrap()),
            ..Default::default()
        };
        let img = render_figure(&g, &overlay);
        let (w, _, rgb) = parse_ppm(&img).unwrap();
        for y in 0..9 {
            for x in 0..9 {
                let px = &rgb[3 * (y * w + x)..3 * (y * w + x) + 3];
                if (3..=5).contains(&x) && (3..=5).contains(&y) {
                    assert_eq!(px, RED);
                } else {
                    assert_eq!(px, [128, 128, 128]);
                }
            }
        }
    }

    #[test]
    fn bright_is_high_and_top_is_y_max() {
        let g = level_set_grid(&affine_critic(0.0, 1.0, 0.0), BBox::default(), (3, 3)).unwrap();
        let img = render_figure(&g, &FigureOverlay::default());
        let (_, _, rgb) = parse_ppm(&img).unwrap();
        assert_eq!(rgb[0], 255);
        assert_eq!(rgb[3 * 8], 0);
    }

    #[test]
    fn out_of_box_points_are_skipped() {
        let g = level_set_grid(&affine_critic(0.0, 0.0, 1.0), BBox::default(), (5, 5)).unwrap();
        let overlay = FigureOverlay {
            generated: Some(Batch2D::from_points(&[[5.0, 0.0], [0.0, -2.5]]).unwrap()),
            ..Default::default()
        };
        let img = render_figure(&g, &overlay);
        let (_, _, rgb) = parse_ppm(&img).unwrap();
        assert!(rgb.iter().all(|&b| b == 128));
    }

    #[test]
    fn artifacts_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_run_artifacts(&[], &[], &[], None, dir.path()).unwrap();
        assert_eq!(m.entries.len(), 1);
        assert_eq!(m.entries[0].0, "log.csv");
        let text = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
        assert_eq!(text, format!("log.csv\t{}\n", m.entries[0].1));

        let figs: Vec<Figure> = [500, 2500, 5000, 10000]
            .into_iter()
            .map(|iteration| Figure { iteration, ppm: vec![1, 2, 3] })
            .collect();
        let m = write_run_artifacts(&[], &figs, &[], None, dir.path()).unwrap();
        assert_eq!(m.entries.len(), 5);
        for it in [500, 2500, 5000, 10000] {
            assert!(dir.path().join(format!("levelset_{it}.ppm")).exists());
        }
        let first = fs::read(dir.path().join("manifest.txt")).unwrap();
        write_run_artifacts(&[], &figs, &[], None, dir.path()).unwrap();
        assert_eq!(fs::read(dir.path().join("manifest.txt")).unwrap(), first);
    }

    #[test]
    fn unwritable_directory_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, b"x").unwrap();
        let err = write_run_artifacts(&[], &[], &[], None, &blocker.join("sub")).unwrap_err();
        assert!(err.to_string().contains("file"), "{err}");
    }
}
