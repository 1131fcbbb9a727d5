//! Byte-exact comparisons against committed files in `tests/golden/`.
//!
//! Regenerate with `LIPGAN_BLESS=1 cargo test --test golden` after an
//! intentional change, and review the diff.

mod common;

use std::fs;

use common::{golden_figure, golden_path};
use lipgan::data::{read_points_csv, write_points_csv, Batch2D, Dataset, Rng};
use lipgan::viz::{parse_ppm, GREEN, RED, YELLOW};

fn check(name: &str, bytes: &[u8]) {
    let path = golden_path(name);
    if std::env::var_os("LIPGAN_BLESS").is_some() {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, bytes).unwrap();
    }
    let expected = fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(expected == bytes, "{} differs from the golden copy", path.display());
}

#[test]
fn first_samples_at_seed_zero() {
    for dataset in Dataset::ALL {
        let b: Batch2D<f64> = dataset.sample(&mut Rng::new(0), 8).unwrap();
        let mut csv = Vec::new();
        write_points_csv(&mut csv, &b).unwrap();
        check(&format!("{dataset}_seed0.csv"), &csv);
        assert_eq!(read_points_csv(std::str::from_utf8(&csv).unwrap()).unwrap(), b);
    }
}

#[test]
fn figure_pixmap() {
    let ppm = golden_figure();
    check("figure_linear.ppm", &ppm);
}

/// The golden figure itself, checked against properties that do not depend
/// on the committed bytes.
#[test]
fn figure_pixmap_structure() {
    let ppm = golden_figure();
    let (w, h, rgb) = parse_ppm(&ppm).unwrap();
    assert_eq!((w, h), (33, 33));
    let px = |x: usize, y: usize| -> [u8; 3] { rgb[3 * (y * w + x)..3 * (y * w + x) + 3].try_into().unwrap() };
    // f = x + y/2 is lowest at the bottom-left corner and highest at the top-right.
    assert_eq!(px(0, 32), [0, 0, 0]);
    assert_eq!(px(32, 0), [255, 255, 255]);
    // Overlays drawn later win: the red centre square covers nothing else.
    assert_eq!(px(16, 16), RED);
    // (-1, -1) maps to column 8, row 24; (1, -1) to column 24, row 24.
    assert_eq!(px(8, 24), YELLOW);
    assert_eq!(px(24, 24), GREEN);
    // Gray level along the middle row grows with x.
    let row: Vec<u8> = (0..w).map(|x| px(x, 2)[0]).collect();
    assert!(row.windows(2).all(|p| p[0] <= p[1]));
}
