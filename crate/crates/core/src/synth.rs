//! Synthetic data with a known flank: labeled marker crops for training
//! experiments and small annotated scenes for end-to-end pipeline runs.

use crate::augment::{random_rotate, random_zoom, AugmentationConfig};
use crate::dataset::{AnnotationDocument, ImageInfo, LabeledImages, RawAnnotation, RawKeypoint};
use crate::label::Side;
use crate::seed::stream_rng;
use image::{Rgb, RgbImage};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::path::Path;

fn blend(img: &mut RgbImage, cx: f32, cy: f32, rx: f32, ry: f32, color: [f32; 3]) {
    let (w, h) = img.dimensions();
    let x0 = (cx - rx - 1.0).floor().max(0.0) as u32;
    let x1 = ((cx + rx + 1.0).ceil() as u32).min(w);
    let y0 = (cy - ry - 1.0).floor().max(0.0) as u32;
    let y1 = ((cy + ry + 1.0).ceil() as u32).min(h);
    for y in y0..y1 {
        for x in x0..x1 {
            let dx = (x as f32 - cx) / rx;
            let dy = (y as f32 - cy) / ry;
            // soft edge one pixel wide
            let d = (dx * dx + dy * dy).sqrt();
            let edge = ((1.0 - d) * rx.min(ry)).clamp(0.0, 1.0);
            if edge > 0.0 {
                let p = img.get_pixel_mut(x, y);
                for k in 0..3 {
                    p.0[k] = (p.0[k] as f32 * (1.0 - edge) + color[k] * edge).round() as u8;
                }
            }
        }
    }
}

fn textured_background(rng: &mut ChaCha8Rng, w: u32, h: u32) -> RgbImage {
    let base: [f32; 3] = [rng.gen_range(40.0..110.0), rng.gen_range(50.0..120.0), rng.gen_range(30.0..90.0)];
    let mut img = RgbImage::from_fn(w, h, |_, _| {
        let n: f32 = rng.gen_range(-18.0..18.0);
        Rgb([
            (base[0] + n).clamp(0.0, 255.0) as u8,
            (base[1] + n).clamp(0.0, 255.0) as u8,
            (base[2] + n).clamp(0.0, 255.0) as u8,
        ])
    });
    for _ in 0..rng.gen_range(2..6) {
        let (cx, cy) = (rng.gen_range(0.0..w as f32), rng.gen_range(0.0..h as f32));
        let r = rng.gen_range(2.0..(w as f32 / 6.0));
        let v = rng.gen_range(20.0..150.0);
        blend(&mut img, cx, cy, r, r * rng.gen_range(0.5..1.5), [v, v * 1.1, v * 0.8]);
    }
    img
}

/// One `size × size` crop whose head marker (bright) lies on the `side` half
/// and tail marker (dim) on the other, followed by a random zoom in
/// `[0.8, 1.25]` and rotation within ±30°.
pub fn marker_crop(rng: &mut ChaCha8Rng, side: Side, size: u32) -> RgbImage {
    let s = size as f32;
    let mut img = textured_background(rng, size, size);
    let cx = s / 2.0 + rng.gen_range(-0.08..0.08) * s;
    let cy = s / 2.0 + rng.gen_range(-0.1..0.1) * s;
    let half_len = rng.gen_range(0.22..0.32) * s;
    let body = rng.gen_range(90.0..150.0);
    blend(&mut img, cx, cy, half_len, rng.gen_range(0.1..0.15) * s, [body, body * 0.9, body * 0.75]);

    let dir = match side {
        Side::Right => 1.0,
        Side::Left => -1.0,
    };
    let head = rng.gen_range(225.0..255.0);
    let head_r = rng.gen_range(0.07..0.1) * s;
    blend(&mut img, cx + dir * half_len, cy - rng.gen_range(0.0..0.08) * s, head_r, head_r, [head, head, head * 0.9]);
    let tail = rng.gen_range(150.0..185.0);
    let tail_r = rng.gen_range(0.04..0.06) * s;
    blend(&mut img, cx - dir * half_len, cy + rng.gen_range(-0.04..0.04) * s, tail_r, tail_r, [tail, tail, tail]);

    let cfg = AugmentationConfig::default();
    let zoom = rng.gen_range(cfg.zoom_range.0..=cfg.zoom_range.1);
    let degrees = rng.gen_range(-cfg.max_rotation_degrees..=cfg.max_rotation_degrees);
    let zoomed = random_zoom(&img, zoom, &cfg).expect("zoom within default range");
    random_rotate(&zoomed, degrees, &cfg).expect("rotation within default cap")
}

/// Balanced marker dataset; sample `i` has label Left when `i` is even.
pub fn marker_dataset(count: usize, size: u32, seed: u64) -> LabeledImages {
    let mut out = LabeledImages::default();
    for i in 0..count {
        let side = if i % 2 == 0 { Side::Left } else { Side::Right };
        let mut rng = stream_rng(seed, i as u64);
        out.push(marker_crop(&mut rng, side, size), side);
    }
    out
}

/// Species cycled through by [`synthetic_scenes`]; hippopotamus exercises the
/// exclusion filter.
pub const SCENE_SPECIES: &[&str] = &["leopard", "bobcat", "lynx", "tiger", "dog", "cat", "fox", "hippopotamus"];

/// Writes `image_count` PNG scenes of 160×120 pixels into `dir` and returns
/// their annotation document (paths relative to `dir`). Each scene holds one
/// or two animals; every seventh animal faces the camera so its front and
/// back keypoints overlap.
pub fn synthetic_scenes(dir: &Path, image_count: usize, seed: u64) -> std::io::Result<AnnotationDocument> {
    fs::create_dir_all(dir)?;
    let (w, h) = (160u32, 120u32);
    let mut doc = AnnotationDocument {
        source_id: "synthetic".into(),
        images: Vec::new(),
        annotations: Vec::new(),
    };
    let mut animal = 0usize;
    for i in 0..image_count {
        let mut rng = stream_rng(seed, i as u64);
        let mut img = textured_background(&mut rng, w, h);
        let path = format!("scene_{i:04}.png");
        let animals = if i % 3 == 2 { 2 } else { 1 };
        for a in 0..animals {
            let slot_w = w as f32 / animals as f32;
            let cx = slot_w * (a as f32 + 0.5) + rng.gen_range(-6.0..6.0);
            let cy = h as f32 * 0.5 + rng.gen_range(-10.0..10.0);
            let frontal = animal % 7 == 6;
            let side = if rng.gen_bool(0.5) { Side::Right } else { Side::Left };
            let dir = if side == Side::Right { 1.0 } else { -1.0 };
            let half_len = if frontal { 8.0 } else { rng.gen_range(22.0f32..30.0).min(slot_w * 0.38) };
            let body_h = rng.gen_range(9.0..13.0);
            let body = rng.gen_range(100.0..160.0);
            blend(&mut img, cx, cy, half_len, body_h, [body, body * 0.85, body * 0.6]);

            let (nose_x, nose_y) = if frontal { (cx, cy - body_h) } else { (cx + dir * (half_len + 4.0), cy - body_h * 0.6) };
            blend(&mut img, nose_x, nose_y, 6.0, 6.0, [235.0, 230.0, 210.0]);
            let tail_x = if frontal { cx + 2.0 } else { cx - dir * half_len };
            let tail_end_x = if frontal { cx - 3.0 } else { tail_x - dir * 10.0 };
            blend(&mut img, (tail_x + tail_end_x) / 2.0, cy, 6.0, 2.0, [body * 0.7, body * 0.6, body * 0.4]);
            let paw_y = cy + body_h + 8.0;
            let spread = if frontal { 2.0 } else { half_len * 0.7 };
            let paws = [
                ("front_paw_near", cx + dir * spread, paw_y),
                ("front_paw_far", cx + dir * (spread - 4.0), paw_y - 2.0),
                ("back_paw_near", cx - dir * spread, paw_y),
                ("back_paw_far", cx - dir * (spread - 4.0), paw_y - 2.0),
            ];
            for (_, px, py) in &paws {
                blend(&mut img, *px, *py - 4.0, 2.0, 5.0, [body * 0.8, body * 0.7, body * 0.5]);
            }
            let mut keypoints = vec![
                RawKeypoint { name: "nose".into(), x: nose_x as f64, y: nose_y as f64, visible: true },
                RawKeypoint { name: "ear".into(), x: (nose_x - dir * 3.0) as f64, y: (nose_y - 5.0) as f64, visible: !frontal },
                RawKeypoint { name: "tailbase".into(), x: tail_x as f64, y: cy as f64, visible: true },
                RawKeypoint { name: "tailend".into(), x: tail_end_x as f64, y: cy as f64, visible: !frontal },
                RawKeypoint { name: "center".into(), x: cx as f64, y: cy as f64, visible: true },
            ];
            keypoints.extend(paws.iter().map(|(n, x, y)| RawKeypoint {
                name: (*n).into(),
                x: *x as f64,
                y: *y as f64,
                visible: true,
            }));
            let bx = (cx - half_len - 16.0).max(0.0);
            let by = (cy - body_h - 14.0).max(0.0);
            doc.annotations.push(RawAnnotation {
                annotation_id: format!("{animal:05}"),
                image_path: path.clone(),
                species: SCENE_SPECIES[animal % SCENE_SPECIES.len()].into(),
                bbox: Some([bx as f64, by as f64, (2.0 * half_len + 32.0) as f64, (2.0 * body_h + 34.0) as f64]),
                keypoints,
            });
            animal += 1;
        }
        img.save_with_format(dir.join(&path), image::ImageFormat::Png)
            .map_err(std::io::Error::other)?;
        doc.images.push(ImageInfo { path, width: w, height: h });
    }
    Ok(doc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marker_dataset_is_balanced_and_deterministic() {
        let a = marker_dataset(10, 32, 1);
        let b = marker_dataset(10, 32, 1);
        assert_eq!(a, b);
        assert_eq!(a.labels.iter().filter(|s| **s == Side::Left).count(), 5);
        assert!(a.images.iter().all(|i| i.dimensions() == (32, 32)));
    }

    #[test]
    fn head_marker_is_on_the_labeled_side() {
        let data = marker_dataset(40, 64, 2);
        let mut agree = 0;
        for (img, side) in data.images.iter().zip(&data.labels) {
            // brightest column mass
            let (mut left, mut right) = (0u64, 0u64);
            for (x, _, p) in img.enumerate_pixels() {
                if p.0[0] > 215 {
                    if x < 32 { left += 1 } else { right += 1 }
                }
            }
            let guess = if right > left { Side::Right } else { Side::Left };
            agree += usize::from(guess == *side);
        }
        assert!(agree >= 36, "{agree}");
    }

    #[test]
    fn scenes_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let doc = synthetic_scenes(dir.path(), 3, 4).unwrap();
        assert_eq!(doc.images.len(), 3);
        assert_eq!(doc.annotations.len(), 4);
        assert!(dir.path().join("scene_0002.png").exists());
    }
}
