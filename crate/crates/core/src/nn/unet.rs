//! U-shaped fully convolutional network: `levels` pooling steps, two 3×3 convolutions
//! with ELU per level, channel concatenation skips and a final 1×1 linear projection.

use rand::Rng;

use super::layers::{avg_pool2, avg_pool2_backward, elu, elu_backward, upsample2, upsample2_backward, Conv2d};
use super::{ParamLayout, Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
struct Block {
    conv1: Conv2d,
    conv2: Conv2d,
}

struct BlockCache<T> {
    x: Tensor<T>,
    h1: Tensor<T>,
}

impl Block {
    fn new(layout: &mut ParamLayout, name: &str, cin: usize, cout: usize) -> Self {
        Self {
            conv1: Conv2d::new(layout, &format!("{name}.conv1"), cin, cout, 3),
            conv2: Conv2d::new(layout, &format!("{name}.conv2"), cout, cout, 3),
        }
    }

    fn forward<T: Real>(&self, p: &[T], x: Tensor<T>) -> (Tensor<T>, BlockCache<T>) {
        let mut h1 = self.conv1.forward(p, &x);
        elu(&mut h1);
        let mut h2 = self.conv2.forward(p, &h1);
        elu(&mut h2);
        (h2, BlockCache { x, h1 })
    }

    fn backward<T: Real>(
        &self,
        p: &[T],
        g: &mut [T],
        cache: &BlockCache<T>,
        h2: &Tensor<T>,
        mut dh2: Tensor<T>,
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        elu_backward(h2, &mut dh2);
        let mut dh1 = self.conv2.backward(p, g, &cache.h1, &dh2, true).expect("requested");
        elu_backward(&cache.h1, &mut dh1);
        self.conv1.backward(p, g, &cache.x, &dh1, need_dx)
    }

    fn init<T: Real>(&self, p: &mut [T], rng: &mut impl Rng) {
        self.conv1.init(p, rng);
        self.conv2.init(p, rng);
    }
}

/// Parameter offsets of one U-Net inside a shared flat vector.
#[derive(Clone, Debug, PartialEq)]
pub struct UNet {
    pub in_channels: usize,
    pub out_channels: usize,
    pub levels: usize,
    down: Vec<Block>,
    bottleneck: Block,
    up: Vec<Block>,
    head: Conv2d,
}

/// Activations retained for the backward pass.
pub struct UNetCache<T> {
    down: Vec<(BlockCache<T>, Tensor<T>)>,
    bottleneck: (BlockCache<T>, Tensor<T>),
    up: Vec<(BlockCache<T>, Tensor<T>)>,
    head_input: Tensor<T>,
}

impl UNet {
    /// Widths are `base_width·2^level` for levels `0..=levels` (the last is the bottleneck).
    pub fn new(
        layout: &mut ParamLayout,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        levels: usize,
        base_width: usize,
    ) -> Self {
        let width = |l: usize| base_width << l;
        let mut down = Vec::with_capacity(levels);
        let mut cin = in_channels;
        for l in 0..levels {
            down.push(Block::new(layout, &format!("{name}.down{l}"), cin, width(l)));
            cin = width(l);
        }
        let bottleneck = Block::new(layout, &format!("{name}.bottleneck"), cin, width(levels));
        let mut up = Vec::with_capacity(levels);
        for l in 0..levels {
            up.push(Block::new(layout, &format!("{name}.up{l}"), width(l + 1) + width(l), width(l)));
        }
        let head = Conv2d::new(layout, &format!("{name}.head"), width(0), out_channels, 1);
        Self { in_channels, out_channels, levels, down, bottleneck, up, head }
    }

    pub fn init<T: Real>(&self, p: &mut [T], rng: &mut impl Rng) {
        for b in self.down.iter().chain([&self.bottleneck]).chain(&self.up) {
            b.init(p, rng);
        }
        self.head.init(p, rng);
    }

    /// The final 1×1 projection.
    pub fn head(&self) -> &Conv2d {
        &self.head
    }

    /// Parameter name prefixes of the two bottleneck convolutions.
    pub fn bottleneck_convs(&self) -> [&Conv2d; 2] {
        [&self.bottleneck.conv1, &self.bottleneck.conv2]
    }

    pub fn forward<T: Real>(&self, p: &[T], x: &Tensor<T>) -> Tensor<T> {
        self.forward_cached(p, x.clone()).0
    }

    pub fn forward_cached<T: Real>(&self, p: &[T], x: Tensor<T>) -> (Tensor<T>, UNetCache<T>) {
        assert_eq!(x.c, self.in_channels, "network input channels");
        assert!(
            x.h.is_multiple_of(1 << self.levels) && x.w.is_multiple_of(1 << self.levels),
            "spatial dims must be divisible by 2^levels"
        );
        let mut cur = x;
        let mut down = Vec::with_capacity(self.levels);
        for block in &self.down {
            let (skip, cache) = block.forward(p, cur);
            cur = avg_pool2(&skip);
            down.push((cache, skip));
        }
        let (b, bcache) = self.bottleneck.forward(p, cur);
        let mut cur = b.clone();
        let mut up: Vec<(BlockCache<T>, Tensor<T>)> = Vec::with_capacity(self.levels);
        for l in (0..self.levels).rev() {
            let cat = Tensor::concat(&upsample2(&cur), &down[l].1);
            let (h2, cache) = self.up[l].forward(p, cat);
            cur = h2.clone();
            up.push((cache, h2));
        }
        up.reverse();
        let out = self.head.forward(p, &cur);
        (out, UNetCache { down, bottleneck: (bcache, b), up, head_input: cur })
    }

    /// Accumulate parameter gradients; returns the input gradient when `need_dx`.
    pub fn backward<T: Real>(
        &self,
        p: &[T],
        g: &mut [T],
        cache: &UNetCache<T>,
        dout: &Tensor<T>,
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        let mut d = self.head.backward(p, g, &cache.head_input, dout, true).expect("requested");
        let mut dskips: Vec<Option<Tensor<T>>> = (0..self.levels).map(|_| None).collect();
        for l in 0..self.levels {
            let (bc, h2) = &cache.up[l];
            let dcat = self.up[l].backward(p, g, bc, h2, d, true).expect("requested");
            let up_channels = dcat.c - cache.down[l].1.c;
            let (dup, dskip) = dcat.split(up_channels);
            dskips[l] = Some(dskip);
            d = upsample2_backward(&dup);
        }
        let (bc, b) = &cache.bottleneck;
        let mut d = self.bottleneck.backward(p, g, bc, b, d, true).expect("requested");
        for l in (0..self.levels).rev() {
            let mut dh2 = dskips[l].take().expect("set above");
            dh2.add_assign(&avg_pool2_backward(&d));
            let (bc, skip) = &cache.down[l];
            d = self.down[l].backward(p, g, bc, skip, dh2, need_dx || l > 0)?;
        }
        Some(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shapes_and_input_gradient() {
        let mut layout = ParamLayout::new();
        let net = UNet::new(&mut layout, "u", 3, 2, 2, 2);
        let mut p = vec![0.0f64; layout.total()];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        net.init(&mut p, &mut rng);
        let x = Tensor::from_vec(3, 2, 8, 8, (0..384).map(|i| ((i * 37) % 17) as f64 / 17.0).collect());
        let (y, cache) = net.forward_cached(&p, x.clone());
        assert_eq!(y.shape(), [2, 2, 8, 8]);
        // finite-difference check of the input gradient for L = Σ y
        let ones = Tensor::from_vec(2, 2, 8, 8, vec![1.0; 256]);
        let mut g = vec![0.0; layout.total()];
        let dx = net.backward(&p, &mut g, &cache, &ones, true).unwrap();
        for idx in [0usize, 17, 100, 383] {
            let h = 1e-5;
            let mut xp = x.clone();
            xp.data[idx] += h;
            let mut xm = x.clone();
            xm.data[idx] -= h;
            let fd = (net.forward(&p, &xp).data.iter().sum::<f64>() - net.forward(&p, &xm).data.iter().sum::<f64>())
                / (2.0 * h);
            assert!((fd - dx.data[idx]).abs() < 1e-6 * (1.0 + fd.abs()), "{fd} vs {}", dx.data[idx]);
        }
    }
}
