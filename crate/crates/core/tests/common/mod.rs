#![allow(dead_code)]

use std::path::PathBuf;

use lipgan::data::Batch2D;
use lipgan::nets::affine_critic;
use lipgan::viz::{level_set_grid, render_figure, BBox, FigureOverlay};

pub fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

/// `f(x, y) = x + y / 2` on the default box at 33x33, with one point of
/// each overlay colour.
pub fn golden_figure() -> Vec<u8> {
    let critic = affine_critic([1.0, 0.5], 0.0);
    let grid = level_set_grid(&critic, BBox::default(), (33, 33)).unwrap();
    let overlay = FigureOverlay {
        training: Some(Batch2D::from_points(&[[-1.0, -1.0], [1.5, 1.5]]).unwrap()),
        generated: Some(Batch2D::from_points(&[[1.0, -1.0]]).unwrap()),
        penalty: Some(Batch2D::from_points(&[[0.0, 0.0]]).unwrap()),
    };
    render_figure(&grid, &overlay)
}
