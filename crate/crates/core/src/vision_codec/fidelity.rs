//! Water-mask recovery from reconstructions.

use crate::ndmath::Tensor;
use crate::river_world::{ChannelConfig, Palette};

use super::dataset::FrameDataset;
use super::train::Reconstructor;
use super::CodecError;

/// Water decision for one reconstructed pixel given its channel values.
///
/// Mask-bearing configs threshold the mask channel at 0.5; RGB-only
/// reconstructions call a pixel water when its color is nearer the water
/// palette entry than any other scene color.
pub fn pixel_is_water(cfg: ChannelConfig, px: &[f64], palette: &Palette) -> bool {
    match cfg {
        ChannelConfig::Mask => px[0] >= 0.5,
        ChannelConfig::RgbMask => px[3] >= 0.5,
        ChannelConfig::Rgb => {
            let d = |c: &[f64; 3]| (0..3).map(|i| (px[i] - c[i]).powi(2)).sum::<f64>();
            let water = d(&palette.water);
            [palette.terrain, palette.sky, palette.bridge, palette.island]
                .iter()
                .all(|c| water < d(c))
        }
    }
}

/// Fraction of pixels whose reconstructed water decision matches the true mask.
pub fn water_agreement<M: Reconstructor>(
    model: &M,
    data: &FrameDataset,
    palette: &Palette,
) -> Result<f64, CodecError> {
    if data.is_empty() {
        return Err(CodecError::EmptyDataset);
    }
    let cfg = model.channels();
    let c = cfg.count();
    let r = data.resolution;
    let mut agree = 0usize;
    let mut total = 0usize;
    for f in &data.frames {
        let x = Tensor::new(vec![1, r, r, c], f.channels(cfg))?;
        let y = model.reconstruct(&x)?;
        let truth = f.channels(ChannelConfig::Mask);
        for (px, &t) in y.data().chunks(c).zip(&truth) {
            if pixel_is_water(cfg, px, palette) == (t > 0.5) {
                agree += 1;
            }
            total += 1;
        }
    }
    Ok(agree as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn palette_classification() {
        let pal = Palette::default();
        assert!(pixel_is_water(ChannelConfig::Rgb, &pal.water, &pal));
        assert!(!pixel_is_water(ChannelConfig::Rgb, &pal.sky, &pal));
        assert!(pixel_is_water(ChannelConfig::Mask, &[0.7], &pal));
        assert!(!pixel_is_water(ChannelConfig::RgbMask, &[0.16, 0.36, 0.62, 0.2], &pal));
    }
}
