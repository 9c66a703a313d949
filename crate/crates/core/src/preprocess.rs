//! Surface cropping, 3D median filtering and frame resizing.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::{Geometry, WaveFieldVolume};

pub const DEFAULT_CROP_DEPTH: usize = crate::synth::CROP_DEPTH_PX;
pub const DEFAULT_MEDIAN_KERNEL: usize = 3;
pub const DEFAULT_SURFACE_KAPPA: f64 = 4.0;
const SURFACE_SMOOTHING_WIDTH: usize = 5;

fn median_in_place(values: &mut [f64]) -> f64 {
    let mid = values.len() / 2;
    let (_, m, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}

/// Population standard deviation over time for every `(z, x)` voxel column,
/// laid out `[depth][lateral]`.
fn temporal_std(volume: &WaveFieldVolume) -> Vec<f64> {
    let n = volume.depth_px() * volume.width_px();
    let frames = volume.frames() as f64;
    let mut sum = vec![0.0f64; n];
    let mut sum_sq = vec![0.0f64; n];
    for t in 0..volume.frames() {
        for (i, &v) in volume.frame(t).iter().enumerate() {
            let v = v as f64;
            sum[i] += v;
            sum_sq[i] += v * v;
        }
    }
    sum.iter()
        .zip(&sum_sq)
        .map(|(s, sq)| {
            let mean = s / frames;
            (sq / frames - mean * mean).max(0.0).sqrt()
        })
        .collect()
}

/// Per-column surface depth: the first row whose temporal standard deviation
/// exceeds `kappa` times the background level, followed by a width-5 lateral
/// median.
///
/// The background level is the quietest depth row (minimum over rows of the
/// lateral median of temporal std), which is the noise floor above the
/// surface or deep in attenuated tissue.
pub fn detect_surface(volume: &WaveFieldVolume, kappa: f64) -> Result<Vec<usize>> {
    if volume.frames() < 2 {
        return Err(Error::InvalidArgument(
            "surface detection needs >= 2 frames".into(),
        ));
    }
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "kappa must be > 0, got {kappa}"
        )));
    }
    let (depth, width) = (volume.depth_px(), volume.width_px());
    let std = temporal_std(volume);
    let background = (0..depth)
        .map(|z| median_in_place(&mut std[z * width..(z + 1) * width].to_vec()))
        .fold(f64::INFINITY, f64::min);
    let threshold = kappa * background;

    let raw: Vec<Option<usize>> = (0..width)
        .map(|x| (0..depth).find(|&z| std[z * width + x] > threshold))
        .collect();
    if raw.iter().all(Option::is_none) {
        return Err(Error::NoSurface);
    }

    let half = SURFACE_SMOOTHING_WIDTH / 2;
    let mut found: Vec<f64> = raw.iter().flatten().map(|&z| z as f64).collect();
    let fallback = median_in_place(&mut found) as usize;
    Ok((0..width)
        .map(|x| {
            let lo = x.saturating_sub(half);
            let hi = (x + half).min(width - 1);
            let mut window: Vec<f64> = raw[lo..=hi].iter().flatten().map(|&z| z as f64).collect();
            if window.is_empty() {
                fallback
            } else {
                median_in_place(&mut window) as usize
            }
        })
        .collect())
}

/// Surface row of the volume: metadata if recorded, otherwise the median of
/// [`detect_surface`].
pub fn surface_index(volume: &WaveFieldVolume) -> Result<usize> {
    if let Some(s) = volume.meta.surface_index {
        return Ok(s);
    }
    let mut columns: Vec<f64> = detect_surface(volume, DEFAULT_SURFACE_KAPPA)?
        .into_iter()
        .map(|z| z as f64)
        .collect();
    Ok(median_in_place(&mut columns) as usize)
}

/// Keeps `depth` rows starting at `surface`.
pub fn crop_at(volume: &WaveFieldVolume, surface: usize, depth: usize) -> Result<WaveFieldVolume> {
    let available = volume.depth_px();
    if depth == 0 {
        return Err(Error::InvalidArgument("crop depth must be >= 1".into()));
    }
    if surface + depth > available {
        return Err(Error::InsufficientDepth {
            surface,
            depth,
            available,
        });
    }
    let width = volume.width_px();
    let mut data = Vec::with_capacity(volume.frames() * depth * width);
    for t in 0..volume.frames() {
        let frame = volume.frame(t);
        data.extend_from_slice(&frame[surface * width..(surface + depth) * width]);
    }
    let geometry = Geometry {
        depth_px: depth,
        ..*volume.geometry()
    };
    let mut meta = volume.meta.clone();
    meta.surface_index = Some(0);
    WaveFieldVolume::new(data, geometry, meta)
}

/// Crops `depth` rows beneath the surface (metadata or detected).
pub fn crop_below_surface(volume: &WaveFieldVolume, depth: usize) -> Result<WaveFieldVolume> {
    crop_at(volume, surface_index(volume)?, depth)
}

/// Median over a `kernel^3` neighbourhood with replicate (clamped) borders.
pub fn median_filter_3d(volume: &WaveFieldVolume, kernel: usize) -> Result<WaveFieldVolume> {
    if kernel == 0 || kernel.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "kernel must be odd and >= 1, got {kernel}"
        )));
    }
    let (frames, depth, width) = (volume.frames(), volume.depth_px(), volume.width_px());
    if kernel > frames.min(depth).min(width) {
        return Err(Error::InvalidArgument(format!(
            "kernel {kernel} larger than volume dimension {}x{}x{}",
            frames, depth, width
        )));
    }
    if kernel == 1 {
        return Ok(volume.clone());
    }
    let half = kernel as isize / 2;
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mid = kernel * kernel * kernel / 2;

    let network = MedianNetwork::new(kernel * kernel * kernel);
    let filtered: Vec<Vec<f32>> = (0..frames)
        .into_par_iter()
        .map(|t| {
            let ts: Vec<usize> = (-half..=half)
                .map(|d| clamp(t as isize + d, frames))
                .collect();
            let mut wires = vec![f32::INFINITY; network.wires * width];
            let mut out = Vec::with_capacity(depth * width);
            for z in 0..depth {
                let mut w = 0;
                for &tt in &ts {
                    let frame = volume.frame(tt);
                    for d in -half..=half {
                        let zz = clamp(z as isize + d, depth);
                        let row = &frame[zz * width..(zz + 1) * width];
                        for dx in -half..=half {
                            shift_replicate(row, dx, &mut wires[w * width..(w + 1) * width]);
                            w += 1;
                        }
                    }
                }
                wires[w * width..].fill(f32::INFINITY);
                network.apply(&mut wires, width);
                out.extend_from_slice(&wires[mid * width..(mid + 1) * width]);
            }
            out
        })
        .collect();
    volume.with_data(filtered.concat())
}

/// `out[x] = row[clamp(x + shift)]`.
fn shift_replicate(row: &[f32], shift: isize, out: &mut [f32]) {
    let n = row.len();
    let s = shift.unsigned_abs().min(n);
    if shift >= 0 {
        out[..n - s].copy_from_slice(&row[s..]);
        out[n - s..].fill(row[n - 1]);
    } else {
        out[s..].copy_from_slice(&row[..n - s]);
        out[..s].fill(row[0]);
    }
}

/// Batcher odd-even merge sorting network over `n` values padded to a power
/// of two with +inf, pruned to the comparators that feed rank `n / 2`.
struct MedianNetwork {
    wires: usize,
    comparators: Vec<(usize, usize)>,
}

impl MedianNetwork {
    fn new(n: usize) -> Self {
        let wires = n.next_power_of_two();
        let mut all = Vec::new();
        let mut p = 1;
        while p < wires {
            let mut k = p;
            while k >= 1 {
                for j in (k % p..wires - k).step_by(2 * k) {
                    for i in 0..k.min(wires - j - k) {
                        if (i + j) / (2 * p) == (i + j + k) / (2 * p) {
                            all.push((i + j, i + j + k));
                        }
                    }
                }
                k /= 2;
            }
            p *= 2;
        }
        let mut needed = vec![false; wires];
        needed[n / 2] = true;
        let mut comparators = Vec::new();
        for &(a, b) in all.iter().rev() {
            // comparisons among padding wires never change anything
            if (needed[a] || needed[b]) && a < n {
                needed[a] = true;
                needed[b] = true;
                comparators.push((a, b));
            }
        }
        comparators.reverse();
        Self { wires, comparators }
    }

    /// Runs the network on `width` independent lanes; wire `w` occupies
    /// `wires[w * width..(w + 1) * width]`.
    fn apply(&self, wires: &mut [f32], width: usize) {
        for &(a, b) in &self.comparators {
            let (lo, hi) = wires.split_at_mut(b * width);
            let lo = &mut lo[a * width..(a + 1) * width];
            let hi = &mut hi[..width];
            for (l, h) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*l, *h);
                *l = x.min(y);
                *h = x.max(y);
            }
        }
    }
}

/// Area-averaging weights mapping `n_in` samples onto `n_out <= n_in` bins;
/// entry `(o, i, w)` means output `o` takes `w` of input `i`.
fn area_weights(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(n_in);
            (first..last)
                .filter_map(|i| {
                    let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                    (overlap > 0.0).then_some((i, overlap / scale))
                })
                .collect()
        })
        .collect()
}

/// Downsamples every frame to `out_w x out_h` by area averaging; spacings
/// are rescaled so the physical extent is unchanged.
pub fn resize_frames(
    volume: &WaveFieldVolume,
    out_w: usize,
    out_h: usize,
) -> Result<WaveFieldVolume> {
    let (in_w, in_h) = (volume.width_px(), volume.depth_px());
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidArgument("output size must be >= 1".into()));
    }
    if out_w > in_w || out_h > in_h {
        return Err(Error::InvalidArgument(format!(
            "upsampling not supported: {in_w}x{in_h} -> {out_w}x{out_h}"
        )));
    }
    let wx = area_weights(in_w, out_w);
    let wz = area_weights(in_h, out_h);
    let mut data = Vec::with_capacity(volume.frames() * out_w * out_h);
    let mut lateral = vec![0.0f64; in_h * out_w];
    for t in 0..volume.frames() {
        let frame = volume.frame(t);
        for z in 0..in_h {
            let row = &frame[z * in_w..(z + 1) * in_w];
            for (o, weights) in wx.iter().enumerate() {
                lateral[z * out_w + o] = weights.iter().map(|&(i, w)| w * row[i] as f64).sum();
            }
        }
        for weights in &wz {
            for x in 0..out_w {
                let v: f64 = weights
                    .iter()
                    .map(|&(z, w)| w * lateral[z * out_w + x])
                    .sum();
                data.push(v as f32);
            }
        }
    }
    let g = volume.geometry();
    let geometry = Geometry {
        width_px: out_w,
        depth_px: out_h,
        dx_m: g.dx_m * in_w as f64 / out_w as f64,
        dz_m: g.dz_m * in_h as f64 / out_h as f64,
        ..*g
    };
    let mut meta = volume.meta.clone();
    meta.surface_index = meta
        .surface_index
        .map(|s| (s as f64 * out_h as f64 / in_h as f64).floor() as usize);
    WaveFieldVolume::new(data, geometry, meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_wavefield, noise_sigma_for_snr, SceneSpec};
    use crate::volume::AcquisitionMeta;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn geometry(frames: usize, depth: usize, width: usize) -> Geometry {
        Geometry {
            width_px: width,
            depth_px: depth,
            frames,
            dx_m: 1e-5,
            dz_m: 1e-5,
            dt_s: 1e-4,
        }
    }

    fn random_volume(frames: usize, depth: usize, width: usize, seed: u64) -> WaveFieldVolume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        WaveFieldVolume::from_fn(
            geometry(frames, depth, width),
            AcquisitionMeta::default(),
            |_, _, _| rng.random_range(-1.0f32..1.0),
        )
        .unwrap()
    }

    fn scene(surface: usize) -> SceneSpec {
        let g = Geometry {
            width_px: 48,
            depth_px: 200,
            frames: 64,
            ..Geometry::acquisition()
        };
        let mut spec = SceneSpec::plane_wave(56e3, 800.0, g);
        spec.surface_index = surface;
        spec.depth_attenuation_m = Some(0.5e-3);
        spec
    }

    #[test]
    fn surface_of_noise_free_scene() {
        let v = generate_wavefield(&scene(40)).unwrap();
        assert_eq!(detect_surface(&v, 4.0).unwrap(), vec![40; 48]);
    }

    #[test]
    fn surface_at_20_db() {
        let mut spec = scene(40);
        spec.noise_sigma = noise_sigma_for_snr(1.0, 20.0);
        spec.seed = 11;
        let v = generate_wavefield(&spec).unwrap();
        let found = detect_surface(&v, 4.0).unwrap();
        let good = found.iter().filter(|&&z| z.abs_diff(40) <= 2).count();
        assert!(good as f64 >= 0.95 * found.len() as f64, "{found:?}");
    }

    #[test]
    fn surface_of_zero_volume_is_an_error() {
        let v = WaveFieldVolume::zeros(geometry(8, 20, 10), Default::default()).unwrap();
        assert!(matches!(detect_surface(&v, 4.0), Err(Error::NoSurface)));
    }

    #[test]
    fn crop_rows() {
        let v = WaveFieldVolume::from_fn(geometry(3, 400, 4), Default::default(), |t, z, x| {
            (t * 100_000 + z * 10 + x) as f32
        })
        .unwrap();
        let c = crop_at(&v, 40, 128).unwrap();
        assert_eq!(c.depth_px(), 128);
        assert_eq!((c.width_px(), c.frames()), (4, 3));
        assert_eq!(c.get(2, 0, 1), v.get(2, 40, 1));
        assert_eq!(c.get(1, 127, 3), v.get(1, 167, 3));
        assert_eq!(c.meta.surface_index, Some(0));

        let c0 = crop_at(&v, 0, 128).unwrap();
        assert_eq!(c0.get(0, 5, 0), v.get(0, 5, 0));

        assert!(matches!(
            crop_at(&v, 300, 128),
            Err(Error::InsufficientDepth { surface: 300, .. })
        ));
    }

    #[test]
    fn crop_uses_metadata_or_detection() {
        let v = generate_wavefield(&scene(30)).unwrap();
        assert_eq!(
            crop_below_surface(&v, 128).unwrap().get(5, 0, 3),
            v.get(5, 30, 3)
        );
        let mut anon = v.clone();
        anon.meta.surface_index = None;
        assert_eq!(
            crop_below_surface(&anon, 128).unwrap().data(),
            crop_at(&v, 30, 128).unwrap().data()
        );
    }

    #[test]
    fn crop_twice_equals_shallower_crop() {
        let v = random_volume(4, 300, 5, 1);
        let twice = crop_at(&crop_at(&v, 20, 200).unwrap(), 0, 128).unwrap();
        assert_eq!(twice.data(), crop_at(&v, 20, 128).unwrap().data());
    }

    #[test]
    fn median_of_constant_and_impulse() {
        let c =
            WaveFieldVolume::from_fn(geometry(6, 6, 6), Default::default(), |_, _, _| 2.5).unwrap();
        assert_eq!(median_filter_3d(&c, 3).unwrap().data(), c.data());

        let imp = WaveFieldVolume::from_fn(geometry(6, 6, 6), Default::default(), |t, z, x| {
            if (t, z, x) == (3, 2, 4) {
                10.0
            } else {
                0.0
            }
        })
        .unwrap();
        assert!(median_filter_3d(&imp, 3)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    fn sorted_median(v: &WaveFieldVolume, t: usize, z: usize, x: usize, kernel: usize) -> f32 {
        let h = kernel as isize / 2;
        let c = |i: usize, d: isize, n: usize| (i as isize + d).clamp(0, n as isize - 1) as usize;
        let mut w = Vec::new();
        for dt in -h..=h {
            for dz in -h..=h {
                for dx in -h..=h {
                    w.push(v.get(
                        c(t, dt, v.frames()),
                        c(z, dz, v.depth_px()),
                        c(x, dx, v.width_px()),
                    ));
                }
            }
        }
        w.sort_by(|a, b| a.partial_cmp(b).unwrap());
        w[w.len() / 2]
    }

    #[test]
    fn median_kernel_five_matches_sorting() {
        let v = random_volume(7, 9, 11, 5);
        let m = median_filter_3d(&v, 5).unwrap();
        for t in 0..7 {
            for z in 0..9 {
                for x in 0..11 {
                    assert_eq!(m.get(t, z, x), sorted_median(&v, t, z, x, 5));
                }
            }
        }
    }

    #[test]
    fn median_rejects_bad_kernels() {
        let v = random_volume(4, 4, 4, 0);
        assert!(median_filter_3d(&v, 2).is_err());
        assert!(median_filter_3d(&v, 0).is_err());
        assert!(median_filter_3d(&v, 5).is_err());
        assert_eq!(median_filter_3d(&v, 1).unwrap().data(), v.data());
    }

    #[test]
    fn resize_block_means() {
        let v = random_volume(2, 128, 128, 3);
        let r = resize_frames(&v, 64, 64).unwrap();
        for t in 0..2 {
            for z in 0..64 {
                for x in 0..64 {
                    let block = [
                        v.get(t, 2 * z, 2 * x),
                        v.get(t, 2 * z, 2 * x + 1),
                        v.get(t, 2 * z + 1, 2 * x),
                        v.get(t, 2 * z + 1, 2 * x + 1),
                    ];
                    let mean = block.iter().map(|&b| b as f64).sum::<f64>() / 4.0;
                    assert!((r.get(t, z, x) as f64 - mean).abs() < 1e-6);
                }
            }
        }
        assert!((r.dx_m() - 2e-5).abs() < 1e-18);
    }

    #[test]
    fn resize_constant_and_errors() {
        let c = WaveFieldVolume::from_fn(geometry(2, 128, 118), Default::default(), |_, _, _| 0.75)
            .unwrap();
        let r = resize_frames(&c, 64, 64).unwrap();
        assert!(r.data().iter().all(|&v| (v - 0.75).abs() < 1e-6));
        assert!((r.dx_m() * 64.0 - 118.0 * 1e-5).abs() < 1e-15);
        assert!(resize_frames(&c, 200, 64).is_err());
        assert!(resize_frames(&c, 64, 0).is_err());
    }

    #[test]
    fn area_weights_partition_each_input() {
        for (n_in, n_out) in [(118, 64), (128, 64), (7, 3), (5, 5)] {
            let w = area_weights(n_in, n_out);
            let mut per_input = vec![0.0; n_in];
            for row in &w {
                for &(i, wt) in row {
                    per_input[i] += wt;
                }
                assert!((row.iter().map(|p| p.1).sum::<f64>() - 1.0).abs() < 1e-12);
            }
            let expect = n_out as f64 / n_in as f64;
            assert!(per_input.iter().all(|s| (s - expect).abs() < 1e-12));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn median_stays_within_input_range(seed in any::<u64>()) {
            let v = random_volume(5, 6, 7, seed);
            let m = median_filter_3d(&v, 3).unwrap();
            let (lo, hi) = v.data().iter().fold((f32::MAX, f32::MIN), |(a, b), &x| (a.min(x), b.max(x)));
            prop_assert!(m.data().iter().all(|&x| x >= lo && x <= hi));
        }

        #[test]
        fn resize_preserves_frame_mean(seed in any::<u64>(), out_w in 1usize..=20, out_h in 1usize..=13) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = WaveFieldVolume::from_fn(geometry(2, 13, 20), Default::default(), |_, _, _| {
                rng.random_range(0.5f32..2.0)
            }).unwrap();
            let r = resize_frames(&v, out_w, out_h).unwrap();
            for t in 0..2 {
                let a = v.frame(t).iter().map(|&x| x as f64).sum::<f64>() / v.frame(t).len() as f64;
                let b = r.frame(t).iter().map(|&x| x as f64).sum::<f64>() / r.frame(t).len() as f64;
                prop_assert!((a - b).abs() <= 1e-6 * a.abs());
            }
        }
    }
}
