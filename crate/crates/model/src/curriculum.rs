//! Synthetic three-stage curriculum: shape classification, shape captioning, then
//! two-object spatial questions, plus the stage and tokenization ablations.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fmt;
use std::ops::Range;

use ptk_core::{tokenize, Point, PointCloud, StrategyKind, TokenizerConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{ModelError, Result};
use crate::model::{exact_match, Example};
use crate::params::{ToyModelConfig, ToyModelParams};
use crate::train::{train, LrSchedule, TrainOptions};
use crate::vocab;

pub const SPHERE_RADIUS: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ShapeClass {
    Sphere,
    Cube,
    Cylinder,
    Cone,
    Torus,
    Plane,
    Line,
    Bracket,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 8] = [
        ShapeClass::Sphere,
        ShapeClass::Cube,
        ShapeClass::Cylinder,
        ShapeClass::Cone,
        ShapeClass::Torus,
        ShapeClass::Plane,
        ShapeClass::Line,
        ShapeClass::Bracket,
    ];

    pub fn word(self) -> &'static str {
        match self {
            ShapeClass::Sphere => "sphere",
            ShapeClass::Cube => "cube",
            ShapeClass::Cylinder => "cylinder",
            ShapeClass::Cone => "cone",
            ShapeClass::Torus => "torus",
            ShapeClass::Plane => "plane",
            ShapeClass::Line => "line",
            ShapeClass::Bracket => "bracket",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
}

impl Color {
    pub const ALL: [Color; 4] = [Color::Red, Color::Green, Color::Blue, Color::Yellow];

    pub fn rgb(self) -> [f64; 3] {
        match self {
            Color::Red => [0.9, 0.15, 0.15],
            Color::Green => [0.15, 0.8, 0.2],
            Color::Blue => [0.15, 0.3, 0.9],
            Color::Yellow => [0.9, 0.85, 0.15],
        }
    }

    pub fn word(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticShape {
    pub class: ShapeClass,
    pub color: Color,
    pub n_points: usize,
    /// Standard deviation of the isotropic positional noise.
    pub jitter: f64,
    pub seed: u64,
}

impl SyntheticShape {
    pub fn validate(&self) -> Result<()> {
        if self.n_points < 8 {
            return Err(ModelError::InvalidArgument(format!("n_points {} < 8", self.n_points)));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(ModelError::InvalidArgument(format!("jitter {} must be >= 0", self.jitter)));
        }
        Ok(())
    }
}

fn ideal_point(class: ShapeClass, rng: &mut ChaCha8Rng) -> [f64; 3] {
    let u = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| rng.random_range(lo..hi);
    match class {
        ShapeClass::Sphere => loop {
            let v: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if n > 1e-9 {
                break v.map(|c| c / n * SPHERE_RADIUS);
            }
        },
        ShapeClass::Cube => {
            let h = 0.4;
            let face = rng.random_range(0..6);
            let (a, b) = (u(rng, -h, h), u(rng, -h, h));
            let s = if face % 2 == 0 { -h } else { h };
            match face / 2 {
                0 => [s, a, b],
                1 => [a, s, b],
                _ => [a, b, s],
            }
        }
        ShapeClass::Cylinder => {
            let (r, h) = (0.35, 0.45);
            let t = u(rng, 0.0, TAU);
            if rng.random_bool(0.28) {
                let rr = r * rng.random::<f64>().sqrt();
                let z = if rng.random_bool(0.5) { -h } else { h };
                [rr * t.cos(), rr * t.sin(), z]
            } else {
                [r * t.cos(), r * t.sin(), u(rng, -h, h)]
            }
        }
        ShapeClass::Cone => {
            let (r, h) = (0.4, 0.45);
            let t = u(rng, 0.0, TAU);
            if rng.random_bool(0.3) {
                let rr = r * rng.random::<f64>().sqrt();
                [rr * t.cos(), rr * t.sin(), -h]
            } else {
                // Fraction of the way from apex to base, area-weighted.
                let s = rng.random::<f64>().sqrt();
                [r * s * t.cos(), r * s * t.sin(), h - 2.0 * h * s]
            }
        }
        ShapeClass::Torus => {
            let (big, small) = (0.35, 0.12);
            let (t, p) = (u(rng, 0.0, TAU), u(rng, 0.0, TAU));
            let ring = big + small * p.cos();
            [ring * t.cos(), ring * t.sin(), small * p.sin()]
        }
        ShapeClass::Plane => [u(rng, -0.45, 0.45), u(rng, -0.45, 0.45), 0.0],
        ShapeClass::Line => [u(rng, -0.5, 0.5), 0.0, 0.0],
        ShapeClass::Bracket => {
            let y = u(rng, -0.15, 0.15);
            if rng.random_bool(0.5) {
                [u(rng, -0.45, 0.45), y, -0.45]
            } else {
                [-0.45, y, u(rng, -0.45, 0.45)]
            }
        }
    }
}

/// Noise vector with each axis `N(0, sigma)`, resampled until its length is at most `3 sigma`.
fn bounded_noise(sigma: f64, rng: &mut ChaCha8Rng) -> [f64; 3] {
    if sigma == 0.0 {
        return [0.0; 3];
    }
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| sigma * rng.sample::<f64, _>(StandardNormal));
        if (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt() <= 3.0 * sigma {
            return v;
        }
    }
}

/// Generated points together with their noise-free surface positions, centered on
/// the origin with a random rotation about the vertical (z) axis.
pub fn gen_shape_with_surface(spec: &SyntheticShape) -> Result<(PointCloud, Vec<[f64; 3]>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let yaw = rng.random_range(0.0..TAU);
    let (s, c) = yaw.sin_cos();
    let mut surface = Vec::with_capacity(spec.n_points);
    let mut points = Vec::with_capacity(spec.n_points);
    for _ in 0..spec.n_points {
        let [x, y, z] = ideal_point(spec.class, &mut rng);
        let ideal = [c * x - s * y, s * x + c * y, z];
        let n = bounded_noise(spec.jitter, &mut rng);
        points.push(Point::new([ideal[0] + n[0], ideal[1] + n[1], ideal[2] + n[2]], spec.color.rgb()));
        surface.push(ideal);
    }
    let cloud = PointCloud::new(points, format!("{}-{}", spec.class.word(), spec.seed))?;
    Ok((cloud, surface))
}

pub fn gen_shape(spec: &SyntheticShape) -> Result<PointCloud> {
    gen_shape_with_surface(spec).map(|(cloud, _)| cloud)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Family {
    Horizontal,
    Vertical,
    Depth,
    Distance,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Horizontal, Family::Vertical, Family::Depth, Family::Distance];

    pub fn word(self) -> &'static str {
        match self {
            Family::Horizontal => "horizontal",
            Family::Vertical => "vertical",
            Family::Depth => "depth",
            Family::Distance => "distance",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Relation {
    Left,
    Right,
    Above,
    Below,
    Front,
    Behind,
    Nearer,
    Farther,
}

impl Relation {
    pub fn word(self) -> &'static str {
        match self {
            Relation::Left => "left",
            Relation::Right => "right",
            Relation::Above => "above",
            Relation::Below => "below",
            Relation::Front => "front",
            Relation::Behind => "behind",
            Relation::Nearer => "nearer",
            Relation::Farther => "farther",
        }
    }
}

/// Minimum separation (normalized units) along the queried family for a label.
pub const RELATION_MARGIN: f64 = 0.08;

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Relation of object `a` to object `b` from their centroids; `None` when the
/// separation is inside the margin. Distance is measured from the origin corner
/// of the normalized scene.
pub fn relation_of(family: Family, a: [f64; 3], b: [f64; 3]) -> Option<Relation> {
    let (delta, lo, hi) = match family {
        Family::Horizontal => (a[0] - b[0], Relation::Left, Relation::Right),
        Family::Depth => (a[1] - b[1], Relation::Front, Relation::Behind),
        Family::Vertical => (b[2] - a[2], Relation::Above, Relation::Below),
        Family::Distance => (norm(a) - norm(b), Relation::Nearer, Relation::Farther),
    };
    if delta.abs() < RELATION_MARGIN {
        None
    } else if delta < 0.0 {
        Some(lo)
    } else {
        Some(hi)
    }
}

pub fn centroid(points: &[Point]) -> [f64; 3] {
    let mut c = [0.0; 3];
    for p in points {
        for (a, v) in c.iter_mut().zip(p.xyz) {
            *a += v;
        }
    }
    c.map(|v| v / points.len() as f64)
}

#[derive(Debug, Clone)]
pub struct SceneSample {
    /// Both objects, already normalized; object `i` owns `cloud.points()[spans[i]]`.
    pub cloud: PointCloud,
    pub shapes: [SyntheticShape; 2],
    pub spans: [Range<usize>; 2],
    pub family: Family,
    pub relation: Relation,
    pub question: Vec<u32>,
    pub answer: Vec<u32>,
}

fn aabb(points: &[Point]) -> ([f64; 3], [f64; 3]) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p.xyz[a]);
            hi[a] = hi[a].max(p.xyz[a]);
        }
    }
    (lo, hi)
}

pub fn boxes_disjoint(a: &[Point], b: &[Point]) -> bool {
    let ((alo, ahi), (blo, bhi)) = (aabb(a), aabb(b));
    (0..3).any(|i| ahi[i] < blo[i] || bhi[i] < alo[i])
}

/// Room layout shared by every stage: a main object near the middle and a smaller
/// second object pushed out along one axis (all three for the distance family).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneOptions {
    pub points_per_shape: usize,
    /// Object sizes relative to the shape generator's unit frame.
    pub main_scale: f64,
    pub other_scale: f64,
    pub jitter: f64,
}

impl Default for SceneOptions {
    fn default() -> Self {
        Self {
            points_per_shape: 96,
            main_scale: 0.8,
            other_scale: 0.25,
            jitter: 0.01,
        }
    }
}

fn place(cloud: &PointCloud, center: [f64; 3], scale: f64) -> Vec<Point> {
    cloud
        .points()
        .iter()
        .map(|p| Point::new(std::array::from_fn(|a| center[a] + scale * p.xyz[a]), p.rgb))
        .collect()
}

fn layout(rng: &mut ChaCha8Rng, family: Family) -> [[f64; 3]; 2] {
    let main: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.4..0.6));
    let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let offset = rng.random_range(0.55..0.7);
    let pushed = |a: usize| match family {
        Family::Horizontal => a == 0,
        Family::Depth => a == 1,
        Family::Vertical => a == 2,
        Family::Distance => true,
    };
    let other = std::array::from_fn(|a| {
        if pushed(a) {
            main[a] + side * offset
        } else {
            main[a] + rng.random_range(-0.25..0.25)
        }
    });
    [main, other]
}

/// Places both shapes; `None` when their boxes touch.
fn compose(shapes: &[SyntheticShape; 2], centers: [[f64; 3]; 2], opts: &SceneOptions, id: String) -> Result<Option<(PointCloud, [Range<usize>; 2])>> {
    let main = place(&gen_shape(&shapes[0])?, centers[0], opts.main_scale);
    let other = place(&gen_shape(&shapes[1])?, centers[1], opts.other_scale);
    if !boxes_disjoint(&main, &other) {
        return Ok(None);
    }
    let spans = [0..main.len(), main.len()..main.len() + other.len()];
    let cloud = PointCloud::new([main, other].concat(), id)?.normalize();
    Ok(Some((cloud, spans)))
}

fn random_shape(rng: &mut ChaCha8Rng, class: ShapeClass, opts: &SceneOptions) -> SyntheticShape {
    SyntheticShape {
        class,
        color: Color::ALL[rng.random_range(0..4)],
        n_points: opts.points_per_shape,
        jitter: opts.jitter,
        seed: rng.random(),
    }
}

/// `spec` as the main object of a room, next to a random second shape. Used by the
/// single-object stages so they see objects the way scenes present them.
pub fn gen_shape_view(spec: &SyntheticShape, opts: &SceneOptions) -> Result<PointCloud> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x51ed_270b_27d4_eb2f);
    loop {
        let family = Family::ALL[rng.random_range(0..4)];
        let class = ShapeClass::ALL[rng.random_range(0..8)];
        let other = random_shape(&mut rng, class, opts);
        let centers = layout(&mut rng, family);
        let shapes = [SyntheticShape { n_points: opts.points_per_shape, ..*spec }, other];
        if let Some((cloud, _)) = compose(&shapes, centers, opts, format!("view-{}", spec.seed))? {
            return Ok(cloud);
        }
    }
}

/// Two shapes of different classes at disjoint positions. The question names a
/// relation family; the answer is the main object's class followed by its relation
/// to the other object, checked against the normalized centroids.
pub fn gen_scene(seed: u64, opts: &SceneOptions) -> Result<SceneSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let ca = rng.random_range(0..8);
        let cb = (ca + rng.random_range(1..8)) % 8;
        let shapes = [ca, cb].map(|c| random_shape(&mut rng, ShapeClass::ALL[c], opts));
        let family = Family::ALL[rng.random_range(0..4)];
        let centers = layout(&mut rng, family);
        let Some((cloud, spans)) = compose(&shapes, centers, opts, format!("scene-{seed}"))? else {
            continue;
        };
        let (a, b) = (centroid(&cloud.points()[spans[0].clone()]), centroid(&cloud.points()[spans[1].clone()]));
        let Some(relation) = relation_of(family, a, b) else { continue };
        let question = vec![vocab::id("what"), vocab::id("is"), vocab::id(family.word())];
        let answer = vec![vocab::id(shapes[0].class.word()), vocab::id(relation.word()), vocab::id("<eos>")];
        return Ok(SceneSample {
            cloud,
            shapes,
            spans,
            family,
            relation,
            question,
            answer,
        });
    }
}

/// Deterministic interleaver: after `n` draws, the count of secondary picks is
/// `floor(n * fraction)` or one more, so any window's realized fraction is
/// within `1 / n` of the target.
#[derive(Debug, Clone)]
pub struct MixSampler {
    fraction: f64,
    acc: f64,
}

impl MixSampler {
    pub fn new(fraction: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(ModelError::InvalidArgument(format!("mix fraction {fraction} outside [0, 1]")));
        }
        Ok(Self { fraction, acc: 0.0 })
    }

    /// `true` when the next sample comes from the secondary source.
    pub fn next_is_secondary(&mut self) -> bool {
        self.acc += self.fraction;
        if self.acc >= 1.0 - 1e-12 {
            self.acc -= 1.0;
            true
        } else {
            false
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Recognition = 1,
    Captioning = 2,
    SpatialQa = 3,
}

impl Stage {
    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Stage::Recognition),
            2 => Ok(Stage::Captioning),
            3 => Ok(Stage::SpatialQa),
            _ => Err(ModelError::InvalidArgument(format!("stage {n} is not 1, 2 or 3"))),
        }
    }

    pub fn number(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StagePlan {
    pub stage: Stage,
    /// Fraction of samples drawn from the previous stage's data (stage 3 only).
    pub mix_previous: f64,
    pub train: TrainOptions,
}

impl StagePlan {
    /// `(stage, fraction)` pairs of the training mix; fractions sum to 1.
    pub fn mix(&self) -> Vec<(Stage, f64)> {
        match self.stage {
            Stage::SpatialQa if self.mix_previous > 0.0 => vec![
                (Stage::SpatialQa, 1.0 - self.mix_previous),
                (Stage::Captioning, self.mix_previous),
            ],
            s => vec![(s, 1.0)],
        }
    }
}

/// Tokenized training and held-out examples for one stage.
#[derive(Debug, Clone, Default)]
pub struct StageData {
    pub train: Vec<Example>,
    pub eval: Vec<Example>,
}

#[derive(Debug, Clone)]
pub struct CurriculumData {
    pub stages: BTreeMap<Stage, StageData>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurriculumConfig {
    pub model: ToyModelConfig,
    pub tokenizer: TokenizerConfig,
    pub seed: u64,
    pub scene: SceneOptions,
    pub train_pool: usize,
    pub eval_pool: usize,
    /// Steps for stages 1, 2 and 3.
    pub steps: [usize; 3],
    pub batch_size: usize,
    pub lr: f64,
    pub mix: f64,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        let model = ToyModelConfig::default();
        Self {
            model,
            tokenizer: TokenizerConfig::with_mk(model.m, 3),
            seed: 0,
            scene: SceneOptions::default(),
            train_pool: 2048,
            eval_pool: 512,
            steps: [2000, 100, 300],
            batch_size: 16,
            lr: 3e-3,
            mix: 0.3,
        }
    }
}

impl CurriculumConfig {
    pub fn plan(&self, stage: Stage) -> StagePlan {
        let steps = self.steps[stage.number() as usize - 1];
        StagePlan {
            stage,
            mix_previous: if stage == Stage::SpatialQa { self.mix } else { 0.0 },
            train: TrainOptions {
                steps,
                batch_size: self.batch_size,
                schedule: LrSchedule {
                    peak: self.lr,
                    floor: self.lr * 0.05,
                    warmup: (steps / 20).min(50),
                },
                seed: self.seed ^ (0x5eed_0000 + stage.number() as u64),
                ..TrainOptions::default()
            },
        }
    }

    fn sample_seed(&self, stage: Stage, split: u64, i: usize) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((stage.number() as u64) << 8) | split);
        rng.set_word_pos(i as u128 * 2);
        rng.random()
    }
}

fn shape_example(cfg: &CurriculumConfig, stage: Stage, seed: u64) -> Result<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = SyntheticShape {
        class: ShapeClass::ALL[rng.random_range(0..8)],
        color: Color::ALL[rng.random_range(0..4)],
        n_points: cfg.scene.points_per_shape,
        jitter: cfg.scene.jitter,
        seed: rng.random(),
    };
    let cloud = gen_shape_view(&spec, &cfg.scene)?;
    let seq = tokenize(&cloud, &cfg.tokenizer)?.sequence;
    let class = vocab::id(spec.class.word());
    match stage {
        Stage::Recognition => Example::with_answer(seq, &[vocab::id("what"), vocab::id("shape")], &[class]),
        _ => Example::with_answer(
            seq,
            &[vocab::id("describe")],
            &[vocab::id(spec.color.word()), class, vocab::id("<eos>")],
        ),
    }
}

pub fn scene_example(cfg: &CurriculumConfig, seed: u64) -> Result<Example> {
    let scene = gen_scene(seed, &cfg.scene)?;
    let seq = tokenize(&scene.cloud, &cfg.tokenizer)?.sequence;
    Example::with_answer(seq, &scene.question, &scene.answer)
}

pub fn stage_example(cfg: &CurriculumConfig, stage: Stage, seed: u64) -> Result<Example> {
    match stage {
        Stage::SpatialQa => scene_example(cfg, seed),
        s => shape_example(cfg, s, seed),
    }
}

impl CurriculumData {
    /// Generates every pool. Samples depend only on the seed and their position, so
    /// different tokenizer settings see the same underlying clouds.
    pub fn generate(cfg: &CurriculumConfig) -> Result<Self> {
        let mut stages = BTreeMap::new();
        for stage in [Stage::Recognition, Stage::Captioning, Stage::SpatialQa] {
            let make = |split: u64, n: usize| -> Result<Vec<Example>> {
                (0..n).map(|i| stage_example(cfg, stage, cfg.sample_seed(stage, split, i))).collect()
            };
            stages.insert(
                stage,
                StageData {
                    train: make(0, cfg.train_pool)?,
                    eval: make(1, cfg.eval_pool)?,
                },
            );
        }
        Ok(Self { stages })
    }

    /// Training pool for a plan, interleaving previous-stage samples when mixed.
    pub fn training_set(&self, plan: &StagePlan) -> Result<Vec<Example>> {
        let main = &self.stages[&plan.stage].train;
        if plan.mix_previous == 0.0 || plan.stage != Stage::SpatialQa {
            return Ok(main.clone());
        }
        let other = &self.stages[&Stage::Captioning].train;
        let mut sampler = MixSampler::new(plan.mix_previous)?;
        let (mut i, mut j) = (0, 0);
        let mut out = Vec::with_capacity(main.len());
        for _ in 0..main.len() {
            if sampler.next_is_secondary() && !other.is_empty() {
                out.push(other[j % other.len()].clone());
                j += 1;
            } else {
                out.push(main[i % main.len()].clone());
                i += 1;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricLine {
    pub stage: u8,
    pub step: usize,
    pub metric: &'static str,
    pub value: f64,
}

impl fmt::Display for MetricLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.stage, self.step, self.metric, self.value)
    }
}

pub fn format_metrics(lines: &[MetricLine]) -> String {
    let mut out = String::from("stage,step,metric,value\n");
    for l in lines {
        out.push_str(&l.to_string());
        out.push('\n');
    }
    out
}

pub fn accuracy(params: &ToyModelParams, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0;
    for ex in examples {
        hits += exact_match(params, ex)? as usize;
    }
    Ok(hits as f64 / examples.len() as f64)
}

/// Trains one stage and evaluates it: train accuracy for recognition, held-out
/// exact match for the later stages. A zero-step plan changes nothing and reports
/// nothing.
pub fn run_stage(
    params: &ToyModelParams,
    plan: &StagePlan,
    data: &CurriculumData,
) -> Result<(ToyModelParams, Vec<MetricLine>)> {
    if plan.train.steps == 0 {
        return Ok((params.clone(), Vec::new()));
    }
    let set = data.training_set(plan)?;
    let (trained, report) = train(params, &set, &plan.train)?;
    let stage = plan.stage.number();
    let mut lines: Vec<MetricLine> = report
        .losses
        .iter()
        .enumerate()
        .map(|(step, &value)| MetricLine {
            stage,
            step,
            metric: "loss",
            value,
        })
        .collect();
    let stage_data = &data.stages[&plan.stage];
    let (metric, value) = match plan.stage {
        Stage::Recognition => ("train_accuracy", accuracy(&trained, &stage_data.train)?),
        _ => ("exact_match", accuracy(&trained, &stage_data.eval)?),
    };
    lines.push(MetricLine {
        stage,
        step: plan.train.steps,
        metric,
        value,
    });
    Ok((trained, lines))
}

#[derive(Debug, Clone)]
pub struct CurriculumRun {
    pub params: ToyModelParams,
    pub metrics: Vec<MetricLine>,
}

impl CurriculumRun {
    /// Final evaluation metric of a stage, if it ran.
    pub fn final_metric(&self, stage: Stage) -> Option<f64> {
        self.metrics
            .iter()
            .rev()
            .find(|l| l.stage == stage.number() && l.metric != "loss")
            .map(|l| l.value)
    }
}

/// Runs `stages` in the given order from a fresh initialization.
pub fn run_curriculum(cfg: &CurriculumConfig, data: &CurriculumData, stages: &[Stage]) -> Result<CurriculumRun> {
    let mut params = ToyModelParams::init(cfg.model)?;
    let mut metrics = Vec::new();
    for &stage in stages {
        let (next, lines) = run_stage(&params, &cfg.plan(stage), data)?;
        params = next;
        metrics.extend(lines);
    }
    Ok(CurriculumRun { params, metrics })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationArm {
    pub strategy: StrategyKind,
    pub separators: bool,
}

impl fmt::Display for AblationArm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.strategy {
            StrategyKind::Zyx => "zyx".to_string(),
            StrategyKind::Hilbert => "hilbert".to_string(),
            StrategyKind::Morton => "morton".to_string(),
            StrategyKind::Fps(None) => "fps".to_string(),
            StrategyKind::Fps(Some(n)) => format!("fps:{n}"),
        };
        f.write_str(&name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub arm: AblationArm,
    pub stage3_exact_match: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl fmt::Display for AblationTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>10} {:>18} {:>12}", "strategy", "separators", "stage3_exact_match", "final_loss")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<10} {:>10} {:>18.4} {:>12.6}",
                r.arm.to_string(),
                if r.arm.separators { "on" } else { "off" },
                r.stage3_exact_match,
                r.final_loss
            )?;
        }
        Ok(())
    }
}

/// Trains an identically initialized model on identically seeded data for each
/// tokenization arm and reports stage-3 exact match.
pub fn ablate_tokenization(arms: &[AblationArm], cfg: &CurriculumConfig) -> Result<AblationTable> {
    if arms.len() < 2 {
        return Err(ModelError::InvalidArgument("ablation needs at least two strategies".into()));
    }
    let stages = [Stage::Recognition, Stage::Captioning, Stage::SpatialQa];
    let mut rows = Vec::with_capacity(arms.len());
    for arm in arms {
        let cfg = CurriculumConfig {
            tokenizer: TokenizerConfig {
                strategy: arm.strategy,
                separators: arm.separators,
                ..cfg.tokenizer
            },
            ..*cfg
        };
        let data = CurriculumData::generate(&cfg)?;
        let run = run_curriculum(&cfg, &data, &stages)?;
        let final_loss = run
            .metrics
            .iter()
            .rev()
            .find(|l| l.metric == "loss")
            .map_or(f64::NAN, |l| l.value);
        rows.push(AblationRow {
            arm: *arm,
            stage3_exact_match: run.final_metric(Stage::SpatialQa).unwrap_or(0.0),
            final_loss,
        });
    }
    Ok(AblationTable { rows })
}
