use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::Tensor;

use super::idx::RawImageSet;
use super::shortcut::{Corner, Distribution, GenerationParams, PatchTarget, ShortcutDataset};

/// FashionMNIST class indices used by the dominoes construction.
pub const FASHION_DRESS: u8 = 3;
pub const FASHION_COAT: u8 = 4;

fn check_prob(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("{name} = {p} must lie in [0, 1]")));
    }
    Ok(())
}

/// Binary digit task with a color shortcut.
///
/// `ŷ = digit ≥ 5`, `y` is `ŷ` flipped with probability `p_d`, and the color
/// bit `c` is `y` flipped with probability `p_c`. Channel 0 (red) carries the
/// digit when `c = 0`, channel 1 (green) when `c = 1`. The shortcut is `s = c`.
/// Example `i` draws its flips from a stream derived from `(seed, i)`.
pub fn make_colored_mnist(
    raw: &RawImageSet,
    source: &str,
    p_d: f64,
    p_c: f64,
    seed: u64,
    distribution: Distribution,
) -> Result<ShortcutDataset> {
    check_prob("p_d", p_d)?;
    check_prob("p_c", p_c)?;
    let n = raw.len();
    let hw = raw.image_size();
    let base = RngState::new(seed);
    let mut pixels = vec![0.0f32; n * 2 * hw];
    let mut ys = Vec::with_capacity(n);
    let mut cs = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = base.derive(i as u64);
        let y_hat = usize::from(raw.labels[i] >= 5);
        let y = y_hat ^ usize::from(rng.bernoulli(p_d));
        let c = y ^ usize::from(rng.bernoulli(p_c));
        let dst = &mut pixels[i * 2 * hw + c * hw..i * 2 * hw + (c + 1) * hw];
        dst.copy_from_slice(raw.image(i));
        ys.push(y);
        cs.push(c);
    }
    ShortcutDataset::new(
        Tensor::new(&[n, 2 * hw], pixels)?,
        ys,
        cs,
        [2, raw.height, raw.width],
        2,
        2,
        distribution,
        GenerationParams::ColoredMnist {
            source: source.to_string(),
            p_d,
            p_c,
            seed,
        },
    )
}

/// Swaps the red and green channels of every image and complements `s`.
pub fn flip_colors(ds: &ShortcutDataset) -> Result<ShortcutDataset> {
    if ds.channels != 2 {
        return Err(Error::contract(format!(
            "flip_colors needs a 2-channel dataset, got {} channels",
            ds.channels
        )));
    }
    let hw = ds.height * ds.width;
    let mut images = ds.images.clone();
    for row in images.data_mut().chunks_exact_mut(2 * hw) {
        let (red, green) = row.split_at_mut(hw);
        red.swap_with_slice(green);
    }
    let params = match &ds.params {
        GenerationParams::ColorFlipped { of } => (**of).clone(),
        other => GenerationParams::ColorFlipped {
            of: Box::new(other.clone()),
        },
    };
    ShortcutDataset::new(
        images,
        ds.y.clone(),
        ds.s.iter().map(|&s| 1 - s).collect(),
        ds.image_shape(),
        ds.num_classes,
        ds.num_shortcuts,
        ds.distribution,
        params,
    )
}

/// Binary digit task (`y = digit ≥ 5`) rendered as RGB grayscale, with a
/// solid blue square placed in one corner of target-class images with
/// probability `prob`. `s` records whether the patch is present.
#[allow(clippy::too_many_arguments)]
pub fn inject_patch(
    raw: &RawImageSet,
    source: &str,
    prob: f64,
    patch_size: usize,
    corner: Corner,
    target: PatchTarget,
    seed: u64,
    distribution: Distribution,
) -> Result<ShortcutDataset> {
    check_prob("patch probability", prob)?;
    let (h, w) = (raw.height, raw.width);
    if patch_size == 0 || patch_size > h || patch_size > w {
        return Err(Error::contract(format!(
            "patch of size {patch_size} does not fit a {h}x{w} image"
        )));
    }
    let (r0, c0) = match corner {
        Corner::TopLeft => (0, 0),
        Corner::TopRight => (0, w - patch_size),
        Corner::BottomLeft => (h - patch_size, 0),
        Corner::BottomRight => (h - patch_size, w - patch_size),
    };
    let hw = h * w;
    let n = raw.len();
    let base = RngState::new(seed);
    let mut pixels = Vec::with_capacity(n * 3 * hw);
    let mut ys = Vec::with_capacity(n);
    let mut ss = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = base.derive(i as u64);
        let y = usize::from(raw.labels[i] >= 5);
        let eligible = match target {
            PatchTarget::Positive => y == 1,
            PatchTarget::Negative => y == 0,
        };
        let patched = eligible && rng.bernoulli(prob);
        let start = pixels.len();
        for _ in 0..3 {
            pixels.extend_from_slice(raw.image(i));
        }
        if patched {
            let img = &mut pixels[start..];
            for r in r0..r0 + patch_size {
                for c in c0..c0 + patch_size {
                    img[r * w + c] = 0.0;
                    img[hw + r * w + c] = 0.0;
                    img[2 * hw + r * w + c] = 1.0;
                }
            }
        }
        ys.push(y);
        ss.push(usize::from(patched));
    }
    ShortcutDataset::new(
        Tensor::new(&[n, 3 * hw], pixels)?,
        ys,
        ss,
        [3, h, w],
        2,
        2,
        distribution,
        GenerationParams::Patch {
            source: source.to_string(),
            positive_prob: prob,
            patch_size,
            corner,
            target,
            seed,
        },
    )
}

fn indices_of(raw: &RawImageSet, label: u8) -> Vec<usize> {
    (0..raw.len()).filter(|&i| raw.labels[i] == label).collect()
}

/// Largest per-class size `make_dominoes` can build from these sources.
pub fn dominoes_capacity(mnist: &RawImageSet, fashion: &RawImageSet) -> usize {
    [
        indices_of(mnist, 0).len(),
        indices_of(mnist, 1).len(),
        indices_of(fashion, FASHION_COAT).len(),
        indices_of(fashion, FASHION_DRESS).len(),
    ]
    .into_iter()
    .min()
    .unwrap_or(0)
}

/// MNIST 0/1 stacked above a FashionMNIST coat/dress. The object is the
/// label (`y = 0` coat, `y = 1` dress) and the digit is the shortcut; digit
/// `d` normally accompanies class `d`. In each class exactly
/// `round(minority_fraction · per_class)` examples use the other digit.
/// `per_class = None` uses the largest size the sources allow.
#[allow(clippy::too_many_arguments)]
pub fn make_dominoes(
    mnist: &RawImageSet,
    fashion: &RawImageSet,
    sources: (&str, &str),
    minority_fraction: f64,
    per_class: Option<usize>,
    seed: u64,
    distribution: Distribution,
) -> Result<ShortcutDataset> {
    check_prob("minority_fraction", minority_fraction)?;
    if (mnist.height, mnist.width) != (fashion.height, fashion.width) {
        return Err(Error::dim(
            "make_dominoes",
            &[mnist.height, mnist.width],
            &[fashion.height, fashion.width],
        ));
    }
    let capacity = dominoes_capacity(mnist, fashion);
    let n = per_class.unwrap_or(capacity);
    if n == 0 || n > capacity {
        return Err(Error::contract(format!(
            "dominoes needs {n} source images per class but only {capacity} are available"
        )));
    }
    let minority = (minority_fraction * n as f64 + 0.5).floor() as usize;

    let mut rng = RngState::new(seed);
    let mut digits = [indices_of(mnist, 0), indices_of(mnist, 1)];
    let mut objects = [indices_of(fashion, FASHION_COAT), indices_of(fashion, FASHION_DRESS)];
    for pool in digits.iter_mut().chain(objects.iter_mut()) {
        rng.shuffle(pool);
    }

    // (digit image, object image, s, y)
    let mut pairs = Vec::with_capacity(2 * n);
    let mut next_digit = [0usize; 2];
    for (y, pool) in objects.iter().enumerate() {
        for (k, &obj) in pool[..n].iter().enumerate() {
            let s = if k < n - minority { y } else { 1 - y };
            let d = digits[s][next_digit[s]];
            next_digit[s] += 1;
            pairs.push((d, obj, s, y));
        }
    }
    rng.shuffle(&mut pairs);

    let hw = mnist.image_size();
    let mut pixels = Vec::with_capacity(pairs.len() * 2 * hw);
    for &(d, o, _, _) in &pairs {
        pixels.extend_from_slice(mnist.image(d));
        pixels.extend_from_slice(fashion.image(o));
    }
    ShortcutDataset::new(
        Tensor::new(&[pairs.len(), 2 * hw], pixels)?,
        pairs.iter().map(|p| p.3).collect(),
        pairs.iter().map(|p| p.2).collect(),
        [1, 2 * mnist.height, mnist.width],
        2,
        2,
        distribution,
        GenerationParams::Dominoes {
            mnist_source: sources.0.to_string(),
            fashion_source: sources.1.to_string(),
            minority_fraction,
            per_class: n,
            seed,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Images whose every pixel encodes the example index.
    fn raw(labels: &[u8], h: usize, w: usize) -> RawImageSet {
        let n = labels.len();
        RawImageSet {
            pixels: (0..n)
                .flat_map(|i| std::iter::repeat_n((i + 1) as f32 / (n + 1) as f32, h * w))
                .collect(),
            labels: labels.to_vec(),
            height: h,
            width: w,
        }
    }

    fn digits(n: usize) -> RawImageSet {
        raw(&(0..n).map(|i| (i % 10) as u8).collect::<Vec<_>>(), 4, 4)
    }

    #[test]
    fn colored_mnist_rendering_and_labels() {
        let r = digits(200);
        let ds = make_colored_mnist(&r, "t", 0.0, 0.0, 1, Distribution::Train).unwrap();
        for i in 0..200 {
            let e = ds.example(i);
            assert_eq!(e.y, usize::from(r.labels[i] >= 5));
            assert_eq!(e.s, e.y);
            let (on, off) = if e.s == 0 { (0, 1) } else { (1, 0) };
            assert_eq!(&e.x[on * 16..(on + 1) * 16], r.image(i));
            assert!(e.x[off * 16..(off + 1) * 16].iter().all(|&v| v == 0.0));
        }
        let ds1 = make_colored_mnist(&r, "t", 0.0, 1.0, 1, Distribution::Ood).unwrap();
        assert!(ds1.examples().all(|e| e.s != e.y));
    }

    #[test]
    fn colored_mnist_is_seed_stable_and_prefix_stable() {
        let r = digits(300);
        let a = make_colored_mnist(&r, "t", 0.25, 0.1, 42, Distribution::Train).unwrap();
        let b = make_colored_mnist(&r, "t", 0.25, 0.1, 42, Distribution::Train).unwrap();
        assert_eq!(a, b);
        let prefix = make_colored_mnist(&r.range(0, 100), "t", 0.25, 0.1, 42, Distribution::Train).unwrap();
        assert_eq!(prefix.y, a.y[..100]);
        assert_eq!(prefix.s, a.s[..100]);
        let c = make_colored_mnist(&r, "t", 0.25, 0.1, 43, Distribution::Train).unwrap();
        assert_ne!(a.y, c.y);
    }

    #[test]
    fn flip_rates_within_three_sigma() {
        let r = digits(50_000);
        let (p_d, p_c) = (0.25, 0.1);
        let ds = make_colored_mnist(&r, "t", p_d, p_c, 7, Distribution::Train).unwrap();
        let n = ds.len() as f64;
        let label_flips = ds
            .examples()
            .enumerate()
            .filter(|(i, e)| e.y != usize::from(r.labels[*i] >= 5))
            .count() as f64;
        let color_flips = ds.group_counts().minority() as f64;
        for (count, p) in [(label_flips, p_d), (color_flips, p_c)] {
            let sd = (n * p * (1.0 - p)).sqrt();
            assert!((count - n * p).abs() < 3.0 * sd, "{count} vs {}", n * p);
        }
    }

    #[test]
    fn flip_colors_is_an_involution_and_relabels_groups() {
        let r = digits(120);
        let ds = make_colored_mnist(&r, "t", 0.25, 0.3, 3, Distribution::Train).unwrap();
        let f = flip_colors(&ds).unwrap();
        assert_eq!(f.y, ds.y);
        let (before, after) = (ds.group_counts(), f.group_counts());
        assert_eq!(before.get(0, 1), after.get(1, 1));
        assert_eq!(before.get(1, 0), after.get(0, 0));
        assert_eq!(flip_colors(&f).unwrap(), ds);

        let patched = inject_patch(
            &r,
            "t",
            0.5,
            2,
            Corner::BottomRight,
            PatchTarget::Positive,
            0,
            Distribution::Train,
        )
        .unwrap();
        assert!(matches!(flip_colors(&patched), Err(Error::Contract(_))));
    }

    #[test]
    fn patch_placement() {
        let r = digits(40);
        let ds = inject_patch(
            &r,
            "t",
            1.0,
            2,
            Corner::BottomRight,
            PatchTarget::Positive,
            0,
            Distribution::Train,
        )
        .unwrap();
        for e in ds.examples() {
            assert_eq!(e.s, e.y);
            let blue = &e.x[32..48];
            assert_eq!(blue[15] == 1.0 && e.x[15] == 0.0, e.s == 1);
            assert_eq!(e.x[0], e.x[16]);
        }
        let none = inject_patch(
            &r,
            "t",
            0.0,
            2,
            Corner::TopLeft,
            PatchTarget::Positive,
            0,
            Distribution::Train,
        )
        .unwrap();
        assert!(none.s.iter().all(|&s| s == 0));
        for (i, e) in none.examples().enumerate() {
            assert_eq!(&e.x[..16], r.image(i));
        }
        let anti = inject_patch(
            &r,
            "t",
            1.0,
            2,
            Corner::TopLeft,
            PatchTarget::Negative,
            0,
            Distribution::Ood,
        )
        .unwrap();
        assert!(anti.examples().all(|e| e.s == 1 - e.y));
        assert!(inject_patch(
            &r,
            "t",
            0.9,
            5,
            Corner::TopLeft,
            PatchTarget::Positive,
            0,
            Distribution::Train
        )
        .is_err());
    }

    fn fashion(n: usize) -> RawImageSet {
        raw(&(0..n).map(|i| (i % 10) as u8).collect::<Vec<_>>(), 4, 4)
    }

    #[test]
    fn dominoes_groups() {
        let (m, f) = (digits(100), fashion(100));
        let train = make_dominoes(&m, &f, ("m", "f"), 0.0, None, 1, Distribution::Train).unwrap();
        assert_eq!(train.height, 8);
        assert_eq!(train.len(), 20);
        let c = train.group_counts();
        assert_eq!((c.get(0, 1), c.get(1, 0)), (0, 0));
        assert_eq!((c.get(0, 0), c.get(1, 1)), (10, 10));

        let test = make_dominoes(&m, &f, ("m", "f"), 0.5, Some(10), 2, Distribution::Ood).unwrap();
        assert_eq!(test.group_counts().counts, vec![5, 5, 5, 5]);
        for e in test.examples() {
            let src = m.pixels.chunks_exact(16).position(|img| img == &e.x[..16]).unwrap();
            assert_eq!(m.labels[src] as usize, e.s);
            let obj = f.pixels.chunks_exact(16).position(|img| img == &e.x[16..]).unwrap();
            let expected = if e.y == 0 { FASHION_COAT } else { FASHION_DRESS };
            assert_eq!(f.labels[obj], expected);
        }
        assert!(make_dominoes(&m, &f, ("m", "f"), 0.0, Some(11), 1, Distribution::Train).is_err());
    }
}
