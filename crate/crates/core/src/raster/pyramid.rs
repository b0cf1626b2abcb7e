use super::{RasterError, SketchImage};

/// Number of pyramid levels (level 1 is the source image).
pub const PYRAMID_LEVELS: usize = 5;

/// Multiscale stack produced by repeated 2x2 mean pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePyramid {
    pub levels: Vec<SketchImage>,
}

/// 2x2 mean pooling; dims must be even.
pub fn downsample(img: &SketchImage) -> SketchImage {
    let (w, h) = (img.width / 2, img.height / 2);
    let mut out = SketchImage::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let s = img.get(2 * x, 2 * y)
                + img.get(2 * x + 1, 2 * y)
                + img.get(2 * x, 2 * y + 1)
                + img.get(2 * x + 1, 2 * y + 1);
            out.set(x, y, 0.25 * s);
        }
    }
    out
}

pub fn build_pyramid(img: &SketchImage) -> Result<ImagePyramid, RasterError> {
    let divisor = 1 << (PYRAMID_LEVELS - 1);
    if !img.width.is_multiple_of(divisor) || !img.height.is_multiple_of(divisor) || img.width == 0 || img.height == 0 {
        return Err(RasterError::IndivisibleDims { width: img.width, height: img.height, divisor });
    }
    let mut levels = vec![img.clone()];
    for _ in 1..PYRAMID_LEVELS {
        let next = downsample(levels.last().expect("non-empty"));
        levels.push(next);
    }
    Ok(ImagePyramid { levels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::rasterize;
    use crate::sketch::{Primitive, Sketch};

    #[test]
    fn dims_and_constant_fixpoint() {
        let p = build_pyramid(&SketchImage::filled(128, 128, 0.3)).unwrap();
        let dims: Vec<usize> = p.levels.iter().map(|l| l.width).collect();
        assert_eq!(dims, vec![128, 64, 32, 16, 8]);
        assert!(p.levels.iter().all(|l| l.pixels.iter().all(|&v| (v - 0.3).abs() < 1e-7)));
    }

    #[test]
    fn single_pixel_spreads_to_one_cell() {
        let mut img = SketchImage::zeros(128, 128);
        img.set(37, 90, 1.0);
        let p = build_pyramid(&img).unwrap();
        let top = &p.levels[4];
        let nz: Vec<f32> = top.pixels.iter().copied().filter(|&v| v != 0.0).collect();
        assert_eq!(nz, vec![1.0 / 256.0]);
        assert_eq!(top.get(37 / 16, 90 / 16), 1.0 / 256.0);
    }

    #[test]
    fn mean_preserved_and_source_untouched() {
        let s = Sketch::new(vec![Primitive::circle(0.4, 0.6, 0.3), Primitive::line(0.0, 0.1, 0.9, 1.0)]).unwrap();
        let img = rasterize(&s, 128, 128);
        let p = build_pyramid(&img).unwrap();
        assert_eq!(p.levels[0], img);
        for l in &p.levels {
            assert!((l.mean() - img.mean()).abs() < 1e-5);
        }
    }

    #[test]
    fn indivisible() {
        assert!(matches!(
            build_pyramid(&SketchImage::zeros(40, 128)),
            Err(RasterError::IndivisibleDims { width: 40, .. })
        ));
    }
}
