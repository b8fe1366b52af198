use super::params::{Builder, Gradients, NetParams};
use super::tape::{KinkPattern, Kinks, Node, Tape};
use super::train::cross_entropy_with_grad;
use super::{NetError, NetInput, NetworkConfig, Result};
use crate::ops::FeatureField;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Frozen running statistics.
    Eval,
}

#[derive(Clone, Debug)]
struct Norm {
    t: [usize; 4],
}

/// Pointwise projection followed by normalization.
#[derive(Clone, Debug)]
struct Dense {
    w: usize,
    out: usize,
    norm: Norm,
}

#[derive(Clone, Debug)]
struct ConvNorm {
    w: usize,
    out: usize,
    norm: Norm,
}

#[derive(Clone, Debug)]
struct Bottleneck {
    reduce: Dense,
    conv: ConvNorm,
    expand: Dense,
    skip: Option<Dense>,
}

#[derive(Clone, Debug)]
struct Unit {
    a: ConvNorm,
    b: ConvNorm,
}

#[derive(Clone, Debug)]
struct Block {
    /// `units[r]` on level `r`.
    units: Vec<Vec<Unit>>,
    /// `fuse[x][r]`: one round per resampling step from `x` towards `r`.
    fuse: Vec<Vec<Vec<Dense>>>,
}

#[derive(Clone, Debug)]
struct Stage {
    /// Entry projections `(level, source level, projection)`.
    transitions: Vec<(usize, usize, Dense)>,
    blocks: Vec<Block>,
}

/// Layout of the network; parameters live in [`NetParams`].
#[derive(Clone, Debug)]
pub struct Network {
    config: NetworkConfig,
    stem: Dense,
    bottlenecks: Vec<Bottleneck>,
    stages: Vec<Stage>,
    classifier: (usize, usize),
}

impl<T: Real> Builder<T> {
    fn norm(&mut self, name: &str, c: usize) -> Norm {
        Norm {
            t: [
                self.constant(format!("{name}.gamma"), c, 1.0, true),
                self.constant(format!("{name}.beta"), c, 0.0, true),
                self.constant(format!("{name}.running_mean"), c, 0.0, false),
                self.constant(format!("{name}.running_var"), c, 1.0, false),
            ],
        }
    }

    fn dense(&mut self, name: &str, inp: usize, out: usize) -> Dense {
        let w = self.weight(format!("{name}.weight"), out, inp);
        Dense { w, out, norm: self.norm(&format!("{name}.norm"), out) }
    }

    fn conv_norm(&mut self, name: &str, inp: usize, out: usize) -> ConvNorm {
        let w = self.weight(format!("{name}.weight"), out, 4 * inp);
        ConvNorm { w, out, norm: self.norm(&format!("{name}.norm"), out) }
    }
}

impl Network {
    /// Creates the layout and freshly initialized parameters.
    pub fn init<T: Real>(config: &NetworkConfig, seed: u64) -> Result<(Self, NetParams<T>)> {
        config.validate()?;
        let mut b = Builder::<T>::new(seed);
        let c = config;
        let stem = b.dense("stem", c.input_channels, c.stem_width);
        let wide = 4 * c.c;
        let mut bottlenecks = Vec::new();
        for k in 0..c.bottlenecks {
            let inp = if k == 0 { c.stem_width } else { wide };
            let name = format!("stage1.bottleneck{k}");
            bottlenecks.push(Bottleneck {
                reduce: b.dense(&format!("{name}.reduce"), inp, c.c),
                conv: b.conv_norm(&format!("{name}.conv"), c.c, c.c),
                expand: b.dense(&format!("{name}.expand"), c.c, wide),
                skip: (inp != wide).then(|| b.dense(&format!("{name}.skip"), inp, wide)),
            });
        }
        let first_width = if c.bottlenecks == 0 { c.stem_width } else { wide };
        let mut stages = Vec::new();
        for (si, &nblocks) in c.stage_blocks.iter().enumerate() {
            let s = si + 2;
            let levels = s;
            let mut transitions = Vec::new();
            if s == 2 {
                transitions.push((0, 0, b.dense("stage2.transition0", first_width, c.width(0))));
                transitions.push((1, 0, b.dense("stage2.transition1", first_width, c.width(1))));
            } else {
                let r = levels - 1;
                transitions.push((r, r - 1, b.dense(&format!("stage{s}.transition{r}"), c.width(r - 1), c.width(r))));
            }
            let mut blocks = Vec::new();
            for k in 0..nblocks {
                let name = format!("stage{s}.block{k}");
                let units = (0..levels)
                    .map(|r| {
                        (0..c.residual_units)
                            .map(|u| Unit {
                                a: b.conv_norm(&format!("{name}.level{r}.unit{u}.a"), c.width(r), c.width(r)),
                                b: b.conv_norm(&format!("{name}.level{r}.unit{u}.b"), c.width(r), c.width(r)),
                            })
                            .collect()
                    })
                    .collect();
                let fuse = (0..levels)
                    .map(|x| {
                        (0..levels)
                            .map(|r| {
                                let path = step_levels(x, r);
                                let mut from = x;
                                path.into_iter()
                                    .enumerate()
                                    .map(|(i, to)| {
                                        let d = b.dense(&format!("{name}.fuse{x}to{r}.round{i}"), c.width(from), c.width(to));
                                        from = to;
                                        d
                                    })
                                    .collect()
                            })
                            .collect()
                    })
                    .collect();
                blocks.push(Block { units, fuse });
            }
            stages.push(Stage { transitions, blocks });
        }
        let head = if c.levels == 1 { first_width } else { c.head_width() };
        let cw = b.weight("classifier.weight".into(), c.num_classes, head);
        let cb = b.constant("classifier.bias".into(), c.num_classes, 0.0, true);
        let net = Self { config: config.clone(), stem, bottlenecks, stages, classifier: (cw, cb) };
        Ok((net, NetParams { config: config.clone(), tensors: b.tensors }))
    }

    /// Layout for existing parameters, checking names and shapes.
    pub fn for_params<T: Real>(params: &NetParams<T>) -> Result<Self> {
        let (net, fresh) = Self::init::<T>(&params.config, 0)?;
        let same = fresh.tensors.len() == params.tensors.len()
            && fresh.tensors.iter().zip(&params.tensors).all(|(a, b)| {
                a.name == b.name && a.shape == b.shape && a.trainable == b.trainable && b.data.len() == b.shape.iter().product::<usize>()
            });
        if !same {
            return Err(NetError::ShapeMismatch("parameters do not match the configured layout".into()));
        }
        Ok(net)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    fn check_input<T: Real>(&self, input: &NetInput<T>) -> Result<()> {
        if input.levels() < self.config.levels || input.resamplers.len() + 1 < self.config.levels {
            return Err(NetError::DepthMismatch { needed: self.config.levels, available: input.levels() });
        }
        if input.features.channels != self.config.input_channels || input.features.rows != input.faces(0) {
            return Err(NetError::ShapeMismatch(format!(
                "input is {}x{}, expected {}x{}",
                input.features.rows,
                input.features.channels,
                input.faces(0),
                self.config.input_channels
            )));
        }
        Ok(())
    }

    fn dense<T: Real>(&self, t: &mut Tape<'_, T>, x: Node, d: &Dense, relu: bool) -> Result<Node> {
        let y = t.linear(x, d.w, None, d.out)?;
        let y = self.norm(t, y, &d.norm);
        Ok(if relu { t.relu(y) } else { y })
    }

    fn conv<T: Real>(&self, t: &mut Tape<'_, T>, x: Node, level: usize, d: &ConvNorm, relu: bool) -> Result<Node> {
        let y = t.conv(x, level, d.w, d.out)?;
        let y = self.norm(t, y, &d.norm);
        Ok(if relu { t.relu(y) } else { y })
    }

    fn norm<T: Real>(&self, t: &mut Tape<'_, T>, x: Node, n: &Norm) -> Node {
        t.norm(x, n.t, T::lit(self.config.bn_eps), T::lit(self.config.bn_momentum))
    }

    fn build<T: Real>(&self, t: &mut Tape<'_, T>, input: &NetInput<T>) -> Result<Node> {
        self.check_input(input)?;
        let x = t.leaf(input.features.clone());
        let mut h = self.dense(t, x, &self.stem, true)?;
        for bn in &self.bottlenecks {
            let y = self.dense(t, h, &bn.reduce, true)?;
            let y = self.conv(t, y, 0, &bn.conv, true)?;
            let y = self.dense(t, y, &bn.expand, false)?;
            let skip = match &bn.skip {
                Some(d) => self.dense(t, h, d, false)?,
                None => h,
            };
            let y = t.add(y, skip)?;
            h = t.relu(y);
        }
        let mut levels = vec![h];
        for stage in &self.stages {
            let prev = levels.clone();
            for (r, src, d) in &stage.transitions {
                let mut y = prev[*src];
                for step in *src..*r {
                    y = t.down(y, step)?;
                }
                let y = self.dense(t, y, d, true)?;
                if *r < levels.len() {
                    levels[*r] = y;
                } else {
                    levels.push(y);
                }
            }
            for block in &stage.blocks {
                for (r, units) in block.units.iter().enumerate() {
                    for u in units {
                        let y = self.conv(t, levels[r], r, &u.a, true)?;
                        let y = self.conv(t, y, r, &u.b, false)?;
                        let y = t.add(y, levels[r])?;
                        levels[r] = t.relu(y);
                    }
                }
                levels = self.fuse(t, &levels, block)?;
            }
        }
        let feat = if levels.len() == 1 {
            levels[0]
        } else {
            let mut parts = Vec::with_capacity(levels.len());
            for (r, &y) in levels.iter().enumerate() {
                let mut y = y;
                for step in (0..r).rev() {
                    y = t.up(y, step)?;
                }
                parts.push(y);
            }
            t.concat(parts)?
        };
        t.linear(feat, self.classifier.0, Some(self.classifier.1), self.config.num_classes)
    }

    fn fuse<T: Real>(&self, t: &mut Tape<'_, T>, levels: &[Node], block: &Block) -> Result<Vec<Node>> {
        let count = levels.len();
        let mut out = Vec::with_capacity(count);
        for r in 0..count {
            let mut acc: Option<Node> = None;
            for (x, &hx) in levels.iter().enumerate() {
                let mut y = hx;
                let mut lvl = x;
                for (to, d) in step_levels(x, r).into_iter().zip(&block.fuse[x][r]) {
                    y = if to > lvl { t.down(y, lvl)? } else { t.up(y, to)? };
                    lvl = to;
                    y = self.dense(t, y, d, true)?;
                }
                acc = Some(match acc {
                    None => y,
                    Some(a) => t.add(a, y)?,
                });
            }
            let sum = acc.expect("at least one level");
            out.push(if count > 1 { t.scale(sum, T::one() / T::from_usize_lossy(count)) } else { sum });
        }
        Ok(out)
    }

    /// Per-face class scores on the finest level.
    pub fn forward<T: Real>(&self, params: &NetParams<T>, input: &NetInput<T>, mode: Mode) -> Result<FeatureField<T>> {
        let mut t = Tape::new(params, input, mode == Mode::Train);
        let out = self.build(&mut t, input)?;
        Ok(t.value(out).clone())
    }

    /// Train-mode loss, scores and exact gradients; `running` holds the
    /// updated running statistics to apply with [`Backprop::commit_running`].
    pub fn backprop<T: Real>(&self, params: &NetParams<T>, input: &NetInput<T>, labels: &[usize]) -> Result<Backprop<T>> {
        let mut t = Tape::new(params, input, true);
        let out = self.build(&mut t, input)?;
        let scores = t.value(out).clone();
        let (loss, seed) = cross_entropy_with_grad(&scores, labels)?;
        let grads = t.backward(out, seed)?;
        Ok(Backprop { loss, scores, grads, running: std::mem::take(&mut t.running) })
    }

    /// Batch mean and unbiased variance of every normalization layer for
    /// `input`, as `(running statistic tensor, values)`.
    pub fn batch_statistics<T: Real>(&self, params: &NetParams<T>, input: &NetInput<T>) -> Result<Vec<(usize, Vec<T>)>> {
        let mut exact = self.clone();
        exact.config.bn_momentum = 1.0;
        let mut t = Tape::new(params, input, true);
        exact.build(&mut t, input)?;
        Ok(std::mem::take(&mut t.running))
    }

    /// Rectifier and absolute-value branches of a forward pass.
    pub fn kink_pattern<T: Real>(&self, params: &NetParams<T>, input: &NetInput<T>, mode: Mode) -> Result<KinkPattern> {
        let mut t = Tape::new(params, input, mode == Mode::Train);
        t.kinks = Kinks::Record(KinkPattern::default());
        self.build(&mut t, input)?;
        match t.kinks {
            Kinks::Record(p) => Ok(p),
            _ => unreachable!("recording tape"),
        }
    }

    /// Loss of the smooth piece selected by `pattern`: every rectifier and
    /// absolute value keeps the recorded branch. Equals [`Network::loss`]
    /// wherever the branches agree, and its derivative there is the exact
    /// gradient, which makes it a finite-difference oracle across kinks.
    pub fn loss_on_piece<T: Real>(&self, params: &NetParams<T>, input: &NetInput<T>, labels: &[usize], mode: Mode, pattern: &KinkPattern) -> Result<T> {
        let mut t = Tape::new(params, input, mode == Mode::Train);
        t.kinks = Kinks::Frozen(pattern, 0);
        let out = self.build(&mut t, input)?;
        if let Kinks::Frozen(p, used) = t.kinks {
            if used != p.0.len() {
                return Err(NetError::ShapeMismatch("kink pattern does not match the network".into()));
            }
        }
        Ok(cross_entropy_with_grad(t.value(out), labels)?.0)
    }

    /// Mean cross-entropy of a forward pass in the given mode.
    pub fn loss<T: Real>(&self, params: &NetParams<T>, input: &NetInput<T>, labels: &[usize], mode: Mode) -> Result<T> {
        let scores = self.forward(params, input, mode)?;
        Ok(cross_entropy_with_grad(&scores, labels)?.0)
    }
}

pub struct Backprop<T> {
    pub loss: T,
    pub scores: FeatureField<T>,
    pub grads: Gradients<T>,
    pub running: Vec<(usize, Vec<T>)>,
}

impl<T: Real> Backprop<T> {
    pub fn commit_running(&self, params: &mut NetParams<T>) {
        for (i, v) in &self.running {
            params.tensors[*i].data.clone_from(v);
        }
    }
}

/// Levels visited when stepping one level at a time from `x` to `r`,
/// excluding `x`.
fn step_levels(x: usize, r: usize) -> Vec<usize> {
    if x < r {
        (x + 1..=r).collect()
    } else {
        (r..x).rev().collect()
    }
}
