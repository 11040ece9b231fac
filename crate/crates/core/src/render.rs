//! Scene images for inspection: RGB, depth and an occlusion overlay.
//!
//! In the overlay every invisible pixel is tinted red, `(255, g/2, b/2)`,
//! and every occluded instance gets a pure red box outline drawn on the
//! pixels that are not already tinted. Generated shape colours stay within
//! 30..=225 per channel, so a pixel is tinted exactly when its red channel is
//! 255 and its green channel is non-zero.

use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::image::RgbImage;
use crate::mask::BinaryMask;
use crate::scene::Scene;

pub const OUTLINE: [u8; 3] = [255, 0, 0];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedFiles {
    pub rgb: PathBuf,
    pub depth: PathBuf,
    pub overlay: PathBuf,
}

pub fn is_tinted(px: [u8; 3]) -> bool {
    px[0] == 255 && px[1] > 0
}

pub fn overlay_image(s: &Scene) -> Result<RgbImage> {
    let mut img = s.rgb.clone();
    let mut hidden = BinaryMask::new(s.width, s.height)?;
    for a in &s.annotations {
        hidden = hidden.or(&a.invisible())?;
    }
    for (r, c) in hidden.iter_set() {
        let [_, g, b] = img.get(r, c);
        img.put(r, c, [255, g / 2, b / 2]);
    }
    for a in s.annotations.iter().filter(|a| a.occluded) {
        let b = a.bbox;
        for r in b.y..b.bottom() {
            for c in b.x..b.right() {
                let edge = r == b.y || r + 1 == b.bottom() || c == b.x || c + 1 == b.right();
                if edge && !hidden.get(r, c) {
                    img.put(r, c, OUTLINE);
                }
            }
        }
    }
    Ok(img)
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

/// Writes `<prefix>_rgb.ppm`, `<prefix>_depth.pgm` and `<prefix>_overlay.ppm`.
pub fn render_scene(s: &Scene, out_prefix: &Path) -> Result<RenderedFiles> {
    if let Some(parent) = out_prefix.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| crate::Error::io(parent, e))?;
    }
    let files = RenderedFiles {
        rgb: with_suffix(out_prefix, "_rgb.ppm"),
        depth: with_suffix(out_prefix, "_depth.pgm"),
        overlay: with_suffix(out_prefix, "_overlay.ppm"),
    };
    s.rgb.write_ppm(&files.rgb)?;
    s.depth.write_pgm(&files.depth)?;
    overlay_image(s)?.write_ppm(&files.overlay)?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::ShapeSpec;

    fn tinted_count(img: &RgbImage) -> usize {
        (0..img.height)
            .flat_map(|r| (0..img.width).map(move |c| (r, c)))
            .filter(|&(r, c)| is_tinted(img.get(r, c)))
            .count()
    }

    #[test]
    fn single_object_has_no_tint() {
        let s = Scene::from_shapes(32, 32, vec![ShapeSpec::rectangle(4, 4, 10, 10, [90, 90, 90], 0.7)], 1.0, 0.0, 0).unwrap();
        let img = overlay_image(&s).unwrap();
        assert_eq!(tinted_count(&img), 0);
        assert_eq!(img, s.rgb);
    }

    #[test]
    fn tint_matches_invisible_area() {
        let far = ShapeSpec::rectangle(4, 4, 12, 12, [200, 60, 60], 0.8);
        let near = ShapeSpec::rectangle(10, 8, 12, 12, [60, 60, 200], 0.6);
        let s = Scene::from_shapes(32, 32, vec![far, near], 1.0, 0.0, 0).unwrap();
        let occluded: Vec<_> = s.annotations.iter().filter(|a| a.occluded).collect();
        assert_eq!(occluded.len(), 1);
        let img = overlay_image(&s).unwrap();
        // overlap is x 10..16, y 8..16
        assert_eq!(occluded[0].invisible().count(), 48);
        assert_eq!(tinted_count(&img), 48);
        // outline corner pixel is visible and drawn pure red
        assert_eq!(img.get(4, 4), OUTLINE);
    }

    #[test]
    fn rerender_is_byte_identical() {
        let cfg = crate::GenConfig {
            seed: 2,
            ..Default::default()
        };
        let s = crate::generate_scene(&cfg, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = render_scene(&s, &dir.path().join("a")).unwrap();
        let b = render_scene(&s, &dir.path().join("b")).unwrap();
        for (x, y) in [(&a.rgb, &b.rgb), (&a.depth, &b.depth), (&a.overlay, &b.overlay)] {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
        assert!(a.overlay.to_string_lossy().ends_with("a_overlay.ppm"));
    }
}
