//! Image filtering helpers shared by the perturbations.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::image::Image;

/// Normalized 1-D Gaussian kernel truncated at `4 sigma`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = (4.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with clamped borders.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    let k = gaussian_kernel(sigma);
    if k.len() == 1 {
        return img.clone();
    }
    let r = (k.len() / 2) as isize;
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let mut tmp = Image::new(w, h, ch);
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    acc += kv * img.get_clamped(x as isize + i as isize - r, y as isize, c);
                }
                tmp.set(x, y, c, acc);
            }
        }
    }
    let mut out = Image::new(w, h, ch);
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    acc += kv * tmp.get_clamped(x as isize, y as isize + i as isize - r, c);
                }
                out.set(x, y, c, acc);
            }
        }
    }
    out
}

/// Dense 2-D correlation with an odd square kernel, clamped borders.
pub fn convolve(img: &Image, kernel: &[f64], size: usize) -> Image {
    let r = (size / 2) as isize;
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let taps: Vec<(isize, isize, f64)> = (0..size * size)
        .filter(|i| kernel[*i] != 0.0)
        .map(|i| ((i % size) as isize - r, (i / size) as isize - r, kernel[i]))
        .collect();
    Image::from_fn(w, h, ch, |x, y, c| {
        taps.iter()
            .map(|&(dx, dy, kv)| kv * img.get_clamped(x as isize + dx, y as isize + dy, c))
            .sum()
    })
}

/// Aliased disk of the given radius, smoothed by a Gaussian of `alias_sigma`.
pub fn disk_kernel(radius: f64, alias_sigma: f64) -> (Vec<f64>, usize) {
    let r = radius.ceil() as isize;
    let size = (2 * r + 1) as usize;
    let mut disk = Image::new(size, size, 1);
    for y in -r..=r {
        for x in -r..=r {
            if (x * x + y * y) as f64 <= radius * radius {
                disk.set((x + r) as usize, (y + r) as usize, 0, 1.0);
            }
        }
    }
    let smooth = gaussian_blur(&disk, alias_sigma);
    let s: f64 = smooth.data().iter().sum();
    (smooth.data().iter().map(|v| v / s).collect(), size)
}

/// Bilinear sample with clamped borders.
pub fn sample_clamped(img: &Image, u: f64, v: f64, c: usize) -> f64 {
    let u = u.clamp(0.0, (img.width() - 1) as f64);
    let v = v.clamp(0.0, (img.height() - 1) as f64);
    img.bilinear(u, v, c).unwrap_or(0.0)
}

/// One-sided linear blur: each pixel averages samples trailing along
/// `angle` (radians) with Gaussian weights of `sigma`, up to `radius` pixels.
pub fn motion_blur(img: &Image, radius: f64, sigma: f64, angle: f64) -> Image {
    let n = radius.round().max(0.0) as usize;
    let weights: Vec<f64> = (0..=n).map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = weights.iter().sum();
    let (dx, dy) = (angle.cos(), angle.sin());
    Image::from_fn(img.width(), img.height(), img.channels(), |x, y, c| {
        weights
            .iter()
            .enumerate()
            .map(|(k, wk)| wk * sample_clamped(img, x as f64 - k as f64 * dx, y as f64 - k as f64 * dy, c))
            .sum::<f64>()
            / total
    })
}

/// Center crop by `1/zoom` followed by bilinear upscaling to the input size.
pub fn clipped_zoom(img: &Image, zoom: f64) -> Image {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let (cw, ch) = (w / zoom, h / zoom);
    let (ox, oy) = ((w - cw) * 0.5, (h - ch) * 0.5);
    Image::from_fn(img.width(), img.height(), img.channels(), |x, y, c| {
        let u = ox + (x as f64 + 0.5) / zoom - 0.5;
        let v = oy + (y as f64 + 0.5) / zoom - 0.5;
        sample_clamped(img, u, v, c)
    })
}

/// Box-filter downsampling to `nw x nh`.
pub fn box_resize(img: &Image, nw: usize, nh: usize) -> Image {
    let sx = img.width() as f64 / nw as f64;
    let sy = img.height() as f64 / nh as f64;
    // source pixel i belongs to the cell containing its center i + 0.5
    let span = |o: usize, s: f64, n: usize| {
        let first = |o: usize| ((o as f64 * s - 0.5).ceil().max(0.0) as usize).min(n);
        let (a, b) = (first(o), first(o + 1));
        if a < b {
            (a, b)
        } else {
            let nearest = ((o as f64 + 0.5) * s) as usize;
            (nearest.min(n - 1), nearest.min(n - 1) + 1)
        }
    };
    Image::from_fn(nw, nh, img.channels(), |x, y, c| {
        let (x0, x1) = span(x, sx, img.width());
        let (y0, y1) = span(y, sy, img.height());
        let mut acc = 0.0;
        for yy in y0..y1 {
            for xx in x0..x1 {
                acc += img.get(xx, yy, c);
            }
        }
        acc / ((x1 - x0) * (y1 - y0)) as f64
    })
}

/// Nearest-neighbour resize to `nw x nh`.
pub fn nearest_resize(img: &Image, nw: usize, nh: usize) -> Image {
    Image::from_fn(nw, nh, img.channels(), |x, y, c| {
        let sx = ((x as f64 + 0.5) * img.width() as f64 / nw as f64) as usize;
        let sy = ((y as f64 + 0.5) * img.height() as f64 / nh as f64) as usize;
        img.get(sx.min(img.width() - 1), sy.min(img.height() - 1), c)
    })
}

/// Single-channel field of i.i.d. normal draws.
pub fn normal_field(w: usize, h: usize, mean: f64, std: f64, rng: &mut impl Rng) -> Image {
    Image::from_fn(w, h, 1, |_, _, _| {
        let n: f64 = rng.sample(StandardNormal);
        mean + std * n
    })
}

/// Diamond-square fractal on a power-of-two grid, cropped to `w x h` and
/// normalized to `[0, 1]`. Larger `decay` gives a smoother field.
pub fn plasma_fractal(w: usize, h: usize, decay: f64, rng: &mut impl Rng) -> Image {
    let size = w.max(h).next_power_of_two().max(2);
    let n = size + 1;
    let mut g = vec![0.0f64; n * n];
    let idx = |x: usize, y: usize| (y % size) * n + (x % size);
    let mut step = size;
    let mut amp = 1.0;
    while step >= 2 {
        let half = step / 2;
        for y in (0..size).step_by(step) {
            for x in (0..size).step_by(step) {
                let avg = 0.25 * (g[idx(x, y)] + g[idx(x + step, y)] + g[idx(x, y + step)] + g[idx(x + step, y + step)]);
                g[idx(x + half, y + half)] = avg + amp * rng.random_range(-1.0..1.0);
            }
        }
        for y in (0..size).step_by(half) {
            let x_start = if (y / half).is_multiple_of(2) { half } else { 0 };
            for x in (x_start..size).step_by(step) {
                let l = g[idx(x + size - half, y)];
                let r = g[idx(x + half, y)];
                let u = g[idx(x, y + size - half)];
                let d = g[idx(x, y + half)];
                g[idx(x, y)] = 0.25 * (l + r + u + d) + amp * rng.random_range(-1.0..1.0);
            }
        }
        step = half;
        amp /= decay;
    }
    let mut out = Image::from_fn(w, h, 1, |x, y, _| g[idx(x, y)]);
    let (lo, hi) = out
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = (hi - lo).max(1e-12);
    out.data_mut().iter_mut().for_each(|v| *v = (*v - lo) / span);
    out
}

/// Gradient (Perlin) noise summed over octaves, normalized to `[0, 1]`.
pub fn perlin_texture(w: usize, h: usize, base_cell: f64, octaves: usize, rng: &mut impl Rng) -> Image {
    let mut out = Image::new(w, h, 1);
    let mut cell = base_cell;
    let mut amp = 1.0;
    for _ in 0..octaves {
        let gw = (w as f64 / cell).ceil() as usize + 2;
        let gh = (h as f64 / cell).ceil() as usize + 2;
        let grads: Vec<(f64, f64)> = (0..gw * gh)
            .map(|_| {
                let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                (a.cos(), a.sin())
            })
            .collect();
        let fade = |t: f64| t * t * t * (t * (t * 6.0 - 15.0) + 10.0);
        for y in 0..h {
            for x in 0..w {
                let (u, v) = (x as f64 / cell, y as f64 / cell);
                let (i, j) = (u.floor() as usize, v.floor() as usize);
                let (fu, fv) = (u - i as f64, v - j as f64);
                let dot = |gi: usize, gj: usize, dx: f64, dy: f64| {
                    let g = grads[gj * gw + gi];
                    g.0 * dx + g.1 * dy
                };
                let n00 = dot(i, j, fu, fv);
                let n10 = dot(i + 1, j, fu - 1.0, fv);
                let n01 = dot(i, j + 1, fu, fv - 1.0);
                let n11 = dot(i + 1, j + 1, fu - 1.0, fv - 1.0);
                let (a, b) = (fade(fu), fade(fv));
                let nx0 = n00 + a * (n10 - n00);
                let nx1 = n01 + a * (n11 - n01);
                let val = nx0 + b * (nx1 - nx0);
                let cur = out.get(x, y, 0);
                out.set(x, y, 0, cur + amp * val);
            }
        }
        cell = (cell * 0.5).max(1.0);
        amp *= 0.5;
    }
    let (lo, hi) = out
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = (hi - lo).max(1e-12);
    out.data_mut().iter_mut().for_each(|v| *v = (*v - lo) / span);
    out
}

/// Horizontal and vertical Sobel responses of a single-channel image, with
/// edge pixels replicated.
pub fn sobel_gradients(img: &Image) -> (Image, Image) {
    let (w, h) = (img.width(), img.height());
    let mut gx = Image::new(w, h, 1);
    let mut gy = Image::new(w, h, 1);
    for y in 0..h {
        for x in 0..w {
            let p = |dx: isize, dy: isize| img.get_clamped(x as isize + dx, y as isize + dy, 0);
            // grouped so that equal columns cancel exactly
            gx.set(x, y, 0, (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1)));
            gy.set(x, y, 0, (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1)));
        }
    }
    (gx, gy)
}

/// Sobel gradient magnitude of a single-channel image.
pub fn sobel_magnitude(img: &Image) -> Image {
    let (gx, gy) = sobel_gradients(img);
    let data = gx.data().iter().zip(gy.data()).map(|(a, b)| (a * a + b * b).sqrt()).collect();
    Image::from_vec(img.width(), img.height(), 1, data).expect("same shape")
}
