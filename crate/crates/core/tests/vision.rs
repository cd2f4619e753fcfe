use riverbench::cmdp_env::EnvConfig;
use riverbench::river_world::{generate_world, ChannelConfig, Frame, Level};
use riverbench::vision_codec::{
    encode_dataset, reconstruction_loss, relative_entropy, train_vae, water_agreement, FrameDataset, Vae, VaeConfig,
};

fn small_set(count: usize, seed: u64) -> FrameDataset {
    let world = generate_world(Level::Medium, 0);
    FrameDataset::collect(&world, &EnvConfig::default(), count, 32, seed)
}

fn quick_cfg(channels: ChannelConfig) -> VaeConfig {
    VaeConfig {
        channels,
        epochs: 6,
        batch_size: 16,
        ..VaeConfig::default()
    }
}

#[test]
fn training_descends_and_beats_untrained_weights() {
    let train = small_set(96, 1);
    let eval = small_set(32, 2);
    let cfg = quick_cfg(ChannelConfig::RgbMask);
    let (vae, curve) = train_vae(&train, &cfg).unwrap();
    assert!(curve.last().unwrap() < &(0.5 * curve[0]), "curve {curve:?}");

    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(cfg.seed);
    let untrained = Vae::new(cfg.latent_dim, cfg.channels, 32, &mut rng).unwrap();
    let before = reconstruction_loss(&untrained, &eval).unwrap();
    let after = reconstruction_loss(&vae, &eval).unwrap();
    assert!(after < before, "trained {after} vs untrained {before}");
}

#[test]
fn encoding_is_deterministic_and_sized() {
    let data = small_set(8, 3);
    let (vae, _) = train_vae(&data, &VaeConfig { epochs: 1, ..quick_cfg(ChannelConfig::Rgb) }).unwrap();
    let px = data.frames[0].channels(ChannelConfig::Rgb);
    let z1 = vae.encode(&px).unwrap();
    assert_eq!(z1.len(), 16);
    assert_eq!(z1, vae.encode(&px).unwrap());
    let enc = encode_dataset(&vae, &data).unwrap();
    assert_eq!(enc.len(), 8);
    assert_eq!(&enc.values[..16], z1.as_slice());
    let re = relative_entropy(&enc, &enc).unwrap();
    assert!(re.mean.abs() <= 1e-12);
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Darkens sky pixels only; water, terrain and the mask are untouched.
fn perturb_sky(f: &Frame, sky: [f64; 3]) -> Frame {
    let mut g = f.clone();
    for px in g.data_mut().chunks_mut(4) {
        if px[..3] == sky {
            for c in &mut px[..3] {
                *c *= 0.8;
            }
        }
    }
    g
}

#[test]
fn sky_changes_move_latents_less_than_water_geometry() {
    let world = generate_world(Level::Medium, 0);
    let train = small_set(160, 5);
    let (vae, _) = train_vae(&train, &quick_cfg(ChannelConfig::RgbMask)).unwrap();
    let probe = small_set(24, 6);
    let cfg = ChannelConfig::RgbMask;
    let z = |f: &Frame| vae.encode(&f.channels(cfg)).unwrap();
    let mut sky_moves = 0.0;
    let mut geometry_moves = 0.0;
    let mut with_sky = 0;
    for i in 0..probe.len() {
        let f = &probe.frames[i];
        let zf = z(f);
        let g = perturb_sky(f, world.palette.sky);
        if g != *f {
            with_sky += 1;
        }
        sky_moves += dist(&zf, &z(&g));
        geometry_moves += dist(&zf, &z(&probe.frames[(i + 1) % probe.len()]));
    }
    assert!(with_sky > probe.len() / 2, "most probe frames show sky");
    let ratio = sky_moves / geometry_moves;
    assert!(ratio < 0.5, "sky/geometry latent distance ratio {ratio}");
}

#[test]
fn mask_channel_recovers_water() {
    let world = generate_world(Level::Medium, 0);
    let train = small_set(96, 7);
    let eval = small_set(24, 8);
    let (vae, _) = train_vae(&train, &quick_cfg(ChannelConfig::Mask)).unwrap();
    let agree = water_agreement(&vae, &eval, &world.palette).unwrap();
    let base = 1.0 - eval.frames.iter().map(|f| f.mask_fraction()).sum::<f64>() / eval.len() as f64;
    assert!(agree > base.max(0.5), "agreement {agree} vs all-dry baseline {base}");
}
