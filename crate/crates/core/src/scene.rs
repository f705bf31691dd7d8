//! Indoor environment and deterministic path tracing.
//!
//! Specular wall bounces come from the image method; panels are single-hop
//! point interactions at the panel center whose loss depends on the panel
//! mode and the programmed phase profile.

use thiserror::Error;

use crate::channel::panel_interaction_loss;
use crate::geometry::{Material, Surface, Vec3};
use crate::metasurface::{synthesize_phase_profile, Panel, PanelMode};
use crate::{Diagnostics, SPEED_OF_LIGHT};

/// Bounce budget beyond which tracing is refused.
pub const MAX_BOUNCES_CAP: usize = 4;

/// Default bounce budget.
pub const DEFAULT_MAX_BOUNCES: usize = 2;

/// Default plain-wall reflection loss per bounce (dB).
pub const DEFAULT_WALL_LOSS_DB: f64 = 10.0;

/// Distance within which a waveguide exit port counts as lying on a surface.
const PORT_TOLERANCE_M: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error("bounce budget exceeded: {0} > {MAX_BOUNCES_CAP}")]
    BounceBudgetExceeded(usize),
    #[error("degenerate segment: endpoints coincide")]
    DegenerateSegment,
}

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("{0}")]
    Invalid(Diagnostics),
}

/// Propagation mechanism of a traced path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PathKind {
    Los,
    Absorbed,
    Reflected,
    Waveguided,
}

impl PathKind {
    pub fn name(self) -> &'static str {
        match self {
            PathKind::Los => "los",
            PathKind::Absorbed => "absorbed",
            PathKind::Reflected => "reflected",
            PathKind::Waveguided => "waveguided",
        }
    }

    /// Tie-break order among taps with equal delay.
    pub fn order(self) -> u8 {
        match self {
            PathKind::Los => 0,
            PathKind::Reflected => 1,
            PathKind::Waveguided => 2,
            PathKind::Absorbed => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InteractionKind {
    WallReflection,
    PanelReflection,
    PanelAbsorption,
    WaveguideEntry,
    WaveguideExit,
}

/// One interaction of a path with a surface.
#[derive(Debug, Clone, PartialEq)]
pub struct Interaction {
    /// Index into [`Scene::surfaces`].
    pub surface: usize,
    pub panel: Option<String>,
    pub kind: InteractionKind,
}

impl Interaction {
    pub fn panel_id(&self) -> Option<&str> {
        self.panel.as_deref()
    }
}

/// A single propagation path from the source to a receiver point.
#[derive(Debug, Clone, PartialEq)]
pub struct TracedPath {
    pub kind: PathKind,
    /// Source, interaction points, receiver.
    pub vertices: Vec<Vec3>,
    pub interactions: Vec<Interaction>,
    pub total_length: f64,
    pub delay: f64,
    /// Linear amplitude factor per interaction, in `[0, 1]`.
    pub segment_losses: Vec<f64>,
}

impl TracedPath {
    fn new(kind: PathKind, vertices: Vec<Vec3>, interactions: Vec<Interaction>, segment_losses: Vec<f64>) -> Self {
        let total_length = vertices.windows(2).map(|w| w[0].distance(w[1])).sum::<f64>();
        Self {
            kind,
            vertices,
            interactions,
            total_length,
            delay: total_length / SPEED_OF_LIGHT,
            segment_losses,
        }
    }
}

/// Inputs for [`Scene::new`]. Panel placement fields are overwritten from
/// the surface that mounts each panel.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub tx_position: Vec3,
    pub rx_positions: Vec<Vec3>,
    pub surfaces: Vec<Surface>,
    pub panels: Vec<Panel>,
    pub frequency_hz: f64,
    pub bandwidth_hz: f64,
    pub absorption_coeff_per_m: f64,
    pub max_bounces: usize,
}

impl SceneSpec {
    /// An empty room at 300 GHz with 50 GHz of bandwidth.
    pub fn new(tx_position: Vec3) -> Self {
        Self {
            tx_position,
            rx_positions: Vec::new(),
            surfaces: Vec::new(),
            panels: Vec::new(),
            frequency_hz: 300e9,
            bandwidth_hz: 50e9,
            absorption_coeff_per_m: 0.0,
            max_bounces: DEFAULT_MAX_BOUNCES,
        }
    }

    pub fn wall(mut self, id: &str, corner: Vec3, edge_u: Vec3, edge_v: Vec3, loss_db: f64) -> Self {
        self.surfaces.push(Surface::new(
            id,
            corner,
            edge_u,
            edge_v,
            Material::PlainWall {
                reflection_loss_db: loss_db,
            },
        ));
        self
    }

    /// Mount `panel` on a new surface. `edge_u × edge_v` is the panel front.
    pub fn panel(mut self, surface_id: &str, corner: Vec3, edge_u: Vec3, edge_v: Vec3, panel: Panel) -> Self {
        self.surfaces.push(Surface::new(
            surface_id,
            corner,
            edge_u,
            edge_v,
            Material::Panel {
                panel_id: panel.id.clone(),
            },
        ));
        self.panels.push(panel);
        self
    }

    pub fn build(self) -> Result<Scene, SceneError> {
        Scene::new(self)
    }
}

/// A validated, immutable indoor scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub tx_position: Vec3,
    pub rx_positions: Vec<Vec3>,
    pub surfaces: Vec<Surface>,
    /// Placed panels with synthesized phase profiles.
    pub panels: Vec<Panel>,
    pub frequency_hz: f64,
    pub bandwidth_hz: f64,
    pub absorption_coeff_per_m: f64,
    pub max_bounces: usize,
    /// `panel_surface[i]` is the surface index mounting `panels[i]`.
    panel_surface: Vec<usize>,
}

fn check_vec(d: &mut Diagnostics, path: &str, v: Vec3) {
    if !v.is_finite() {
        d.push(path, "must have finite components");
    }
}

impl Scene {
    pub fn new(spec: SceneSpec) -> Result<Scene, SceneError> {
        let mut d = Diagnostics::default();
        if !(spec.frequency_hz > 0.0 && spec.frequency_hz.is_finite()) {
            d.push("scene.frequency_hz", "must be > 0");
        }
        if !(spec.bandwidth_hz > 0.0 && spec.bandwidth_hz.is_finite()) {
            d.push("scene.bandwidth_hz", "must be > 0");
        }
        if !(spec.absorption_coeff_per_m >= 0.0 && spec.absorption_coeff_per_m.is_finite()) {
            d.push("scene.absorption_coeff_per_m", "must be >= 0");
        }
        if spec.max_bounces > MAX_BOUNCES_CAP {
            d.push("scene.max_bounces", format!("must be <= {MAX_BOUNCES_CAP}"));
        }
        check_vec(&mut d, "scene.tx", spec.tx_position);
        for (i, rx) in spec.rx_positions.iter().enumerate() {
            check_vec(&mut d, &format!("scene.rx[{i}]"), *rx);
        }

        for (i, p) in spec.panels.iter().enumerate() {
            if spec.panels[..i].iter().any(|q| q.id == p.id) {
                d.push(format!("scene.panels[{i}].id"), format!("duplicate panel id {:?}", p.id));
            }
            for (field, msg) in p.problems() {
                d.push(format!("scene.panels[{i}].{field}"), msg);
            }
        }

        let mut panel_surface = vec![None; spec.panels.len()];
        for (i, s) in spec.surfaces.iter().enumerate() {
            let base = format!("scene.surfaces[{i}]");
            check_vec(&mut d, &format!("{base}.corner"), s.corner);
            check_vec(&mut d, &format!("{base}.edge_u"), s.edge_u);
            check_vec(&mut d, &format!("{base}.edge_v"), s.edge_v);
            if s.is_degenerate() {
                d.push(format!("{base}.edge_v"), "edges must be nonzero and not parallel (degenerate surface)");
            }
            if spec.surfaces[..i].iter().any(|o| o.id == s.id) {
                d.push(format!("{base}.id"), format!("duplicate surface id {:?}", s.id));
            }
            match &s.material {
                Material::PlainWall { reflection_loss_db } => {
                    if !(*reflection_loss_db >= 0.0 && reflection_loss_db.is_finite()) {
                        d.push(format!("{base}.reflection_loss_db"), "must be >= 0");
                    }
                }
                Material::Panel { panel_id } => match spec.panels.iter().position(|p| &p.id == panel_id) {
                    None => d.push(format!("{base}.panel"), format!("unknown panel {panel_id:?}")),
                    Some(k) => {
                        if panel_surface[k].is_some() {
                            d.push(format!("{base}.panel"), format!("panel {panel_id:?} is mounted more than once"));
                        }
                        panel_surface[k] = Some(i);
                    }
                },
            }
        }
        for (i, s) in spec.surfaces.iter().enumerate() {
            if s.is_degenerate() {
                continue;
            }
            for (j, o) in spec.surfaces.iter().enumerate().skip(i + 1) {
                if !o.is_degenerate() && s.overlaps(o) {
                    d.push(
                        format!("scene.surfaces[{j}]"),
                        format!("overlaps surface {:?} in its interior", s.id),
                    );
                }
            }
        }
        for (k, slot) in panel_surface.iter().enumerate() {
            if slot.is_none() && !spec.panels.iter().take(k).any(|q| q.id == spec.panels[k].id) {
                d.push(format!("scene.panels[{k}]"), "is not mounted on any surface");
            }
        }
        if !d.is_empty() {
            return Err(SceneError::Invalid(d));
        }

        let panel_surface: Vec<usize> = panel_surface.into_iter().map(|s| s.unwrap()).collect();
        let mut panels = Vec::with_capacity(spec.panels.len());
        for (k, panel) in spec.panels.into_iter().enumerate() {
            let host = &spec.surfaces[panel_surface[k]];
            let base = format!("scene.panels[{k}]");
            let mut placed = match panel.centered_on(host.center(), host.normal(), host.edge_u) {
                Ok(p) => p,
                Err(e) => {
                    d.push(base, e.to_string());
                    continue;
                }
            };
            let center = placed.center();
            let incoming = center - spec.tx_position;
            let target = match &placed.mode {
                PanelMode::ControlledReflect { target_direction } => Some(*target_direction),
                PanelMode::Specular | PanelMode::PolarizationConvert { .. } => {
                    Some(incoming.reflect_direction(placed.normal))
                }
                PanelMode::Absorb => None,
                PanelMode::Waveguide { exit_port, .. } => {
                    if !spec.surfaces.iter().any(|s| s.contains(*exit_port, PORT_TOLERANCE_M)) {
                        d.push(format!("{base}.exit_port"), "must lie on a surface of the scene");
                    }
                    None
                }
            };
            if let Some(target) = target {
                match synthesize_phase_profile(&placed, spec.frequency_hz, spec.tx_position, target) {
                    Ok(psi) => placed.set_phase_profile(psi),
                    Err(e) => d.push(format!("{base}"), e.to_string()),
                }
            }
            panels.push(placed);
        }
        if !d.is_empty() {
            return Err(SceneError::Invalid(d));
        }

        Ok(Scene {
            tx_position: spec.tx_position,
            rx_positions: spec.rx_positions,
            surfaces: spec.surfaces,
            panels,
            frequency_hz: spec.frequency_hz,
            bandwidth_hz: spec.bandwidth_hz,
            absorption_coeff_per_m: spec.absorption_coeff_per_m,
            max_bounces: spec.max_bounces,
            panel_surface,
        })
    }

    /// The inputs this scene was built from, with panels in placed form.
    pub fn to_spec(&self) -> SceneSpec {
        SceneSpec {
            tx_position: self.tx_position,
            rx_positions: self.rx_positions.clone(),
            surfaces: self.surfaces.clone(),
            panels: self.panels.clone(),
            frequency_hz: self.frequency_hz,
            bandwidth_hz: self.bandwidth_hz,
            absorption_coeff_per_m: self.absorption_coeff_per_m,
            max_bounces: self.max_bounces,
        }
    }

    /// Same scene with every panel and its mounting surface removed.
    pub fn without_panels(&self) -> Scene {
        let mut spec = self.to_spec();
        spec.surfaces.retain(|s| s.panel_id().is_none());
        spec.panels.clear();
        Scene::new(spec).expect("removing panels keeps a valid scene")
    }

    /// Same scene with the transmitter moved; panel phases are re-synthesized.
    pub fn with_transmitter(&self, tx: Vec3) -> Result<Scene, SceneError> {
        let mut spec = self.to_spec();
        spec.tx_position = tx;
        Scene::new(spec)
    }

    pub fn panel(&self, id: &str) -> Option<&Panel> {
        self.panels.iter().find(|p| p.id == id)
    }

    /// Axis-aligned bounds of all surfaces, if any.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let mut it = self.surfaces.iter().flat_map(|s| {
            [
                s.corner,
                s.corner + s.edge_u,
                s.corner + s.edge_v,
                s.corner + s.edge_u + s.edge_v,
            ]
        });
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), p| {
            (
                Vec3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z)),
                Vec3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z)),
            )
        }))
    }

    /// Panels are point interactions at their centers and never occlude.
    fn segment_clear(&self, a: Vec3, b: Vec3, skip: &[usize]) -> bool {
        self.surfaces
            .iter()
            .enumerate()
            .all(|(i, s)| skip.contains(&i) || s.panel_id().is_some() || !s.blocks(a, b))
    }
}

/// Whether the open segment `(a, b)` crosses no surface interior.
pub fn los_visibility(scene: &Scene, a: Vec3, b: Vec3) -> Result<bool, TraceError> {
    if a.distance(b) == 0.0 {
        return Err(TraceError::DegenerateSegment);
    }
    Ok(scene.segment_clear(a, b, &[]))
}

/// All paths from the scene transmitter to `rx` with at most `max_bounces`
/// interactions, sorted by delay.
pub fn trace_paths(scene: &Scene, rx: Vec3, max_bounces: usize) -> Result<Vec<TracedPath>, TraceError> {
    trace_from(scene, scene.tx_position, rx, max_bounces)
}

/// Like [`trace_paths`] with an explicit source point. Panel phase profiles
/// stay as synthesized for the scene transmitter.
pub fn trace_from(scene: &Scene, source: Vec3, rx: Vec3, max_bounces: usize) -> Result<Vec<TracedPath>, TraceError> {
    if max_bounces > MAX_BOUNCES_CAP {
        return Err(TraceError::BounceBudgetExceeded(max_bounces));
    }
    if source.distance(rx) == 0.0 {
        return Err(TraceError::DegenerateSegment);
    }
    let mut out = Vec::new();
    if scene.segment_clear(source, rx, &[]) {
        out.push(TracedPath::new(PathKind::Los, vec![source, rx], Vec::new(), Vec::new()));
    }
    if max_bounces > 0 {
        let walls: Vec<usize> = scene
            .surfaces
            .iter()
            .enumerate()
            .filter(|(_, s)| s.panel_id().is_none())
            .map(|(i, _)| i)
            .collect();
        let mut tracer = ImageTracer {
            scene,
            source,
            rx,
            walls: &walls,
            max_bounces,
            sequence: Vec::with_capacity(max_bounces),
            images: Vec::with_capacity(max_bounces),
            out: &mut out,
        };
        tracer.extend();
        panel_paths(scene, source, rx, &mut out);
    }
    out.sort_by(|a, b| {
        a.delay
            .total_cmp(&b.delay)
            .then(a.kind.order().cmp(&b.kind.order()))
            .then(a.interactions.len().cmp(&b.interactions.len()))
    });
    Ok(out)
}

struct ImageTracer<'a> {
    scene: &'a Scene,
    source: Vec3,
    rx: Vec3,
    walls: &'a [usize],
    max_bounces: usize,
    sequence: Vec<usize>,
    images: Vec<Vec3>,
    out: &'a mut Vec<TracedPath>,
}

impl ImageTracer<'_> {
    fn extend(&mut self) {
        if !self.sequence.is_empty() {
            self.try_sequence();
        }
        if self.sequence.len() == self.max_bounces {
            return;
        }
        for &w in self.walls {
            if self.sequence.last() == Some(&w) {
                continue;
            }
            let prev = self.images.last().copied().unwrap_or(self.source);
            let surface = &self.scene.surfaces[w];
            // A point on the plane has no distinct image.
            if surface.signed_distance(prev).abs() < 1e-12 {
                continue;
            }
            self.images.push(surface.mirror(prev));
            self.sequence.push(w);
            self.extend();
            self.sequence.pop();
            self.images.pop();
        }
    }

    fn try_sequence(&mut self) {
        let n = self.sequence.len();
        let surfaces = &self.scene.surfaces;
        let mut points = vec![Vec3::ZERO; n];
        let mut target = self.rx;
        for k in (0..n).rev() {
            let s = &surfaces[self.sequence[k]];
            match s.line_hit(self.images[k], target) {
                Some((lambda, p)) if lambda > 0.0 && lambda < 1.0 => {
                    points[k] = p;
                    target = p;
                }
                _ => return,
            }
        }
        let mut vertices = Vec::with_capacity(n + 2);
        vertices.push(self.source);
        vertices.extend_from_slice(&points);
        vertices.push(self.rx);
        // Each bounce must have its neighbours strictly on the same side.
        for k in 0..n {
            let s = &surfaces[self.sequence[k]];
            let before = s.signed_distance(vertices[k]);
            let after = s.signed_distance(vertices[k + 2]);
            if !(before * after > 0.0) {
                return;
            }
        }
        for leg in 0..=n {
            let mut skip = [usize::MAX; 2];
            if leg > 0 {
                skip[0] = self.sequence[leg - 1];
            }
            if leg < n {
                skip[1] = self.sequence[leg];
            }
            if !self.scene.segment_clear(vertices[leg], vertices[leg + 1], &skip) {
                return;
            }
        }
        let interactions = self
            .sequence
            .iter()
            .map(|&i| Interaction {
                surface: i,
                panel: None,
                kind: InteractionKind::WallReflection,
            })
            .collect();
        let losses = self
            .sequence
            .iter()
            .map(|&i| match surfaces[i].material {
                Material::PlainWall { reflection_loss_db } => 10f64.powf(-reflection_loss_db / 20.0),
                Material::Panel { .. } => unreachable!("panels are not image reflectors"),
            })
            .collect();
        self.out
            .push(TracedPath::new(PathKind::Reflected, vertices, interactions, losses));
    }
}

fn panel_paths(scene: &Scene, source: Vec3, rx: Vec3, out: &mut Vec<TracedPath>) {
    for (k, panel) in scene.panels.iter().enumerate() {
        let j = scene.panel_surface[k];
        let center = panel.center();
        if (source - center).dot(panel.normal) <= 0.0 || !scene.segment_clear(source, center, &[j]) {
            continue;
        }
        let interaction = |kind| Interaction {
            surface: j,
            panel: Some(panel.id.clone()),
            kind,
        };
        match &panel.mode {
            PanelMode::Waveguide { exit_port, .. } => {
                let exit = *exit_port;
                if exit.distance(rx) == 0.0 {
                    continue;
                }
                let mut skip: Vec<usize> = scene
                    .surfaces
                    .iter()
                    .enumerate()
                    .filter(|(_, s)| s.contains(exit, PORT_TOLERANCE_M))
                    .map(|(i, _)| i)
                    .collect();
                skip.push(j);
                if !scene.segment_clear(exit, rx, &skip) {
                    continue;
                }
                let g = panel_interaction_loss(panel, scene.frequency_hz, source, center);
                out.push(TracedPath::new(
                    PathKind::Waveguided,
                    vec![source, center, exit, rx],
                    vec![
                        interaction(InteractionKind::WaveguideEntry),
                        interaction(InteractionKind::WaveguideExit),
                    ],
                    vec![g, 1.0],
                ));
            }
            mode => {
                if (rx - center).dot(panel.normal) <= 0.0 || !scene.segment_clear(center, rx, &[j]) {
                    continue;
                }
                let g = panel_interaction_loss(panel, scene.frequency_hz, source, rx);
                let (kind, ikind) = if matches!(mode, PanelMode::Absorb) {
                    (PathKind::Absorbed, InteractionKind::PanelAbsorption)
                } else {
                    (PathKind::Reflected, InteractionKind::PanelReflection)
                };
                out.push(TracedPath::new(kind, vec![source, center, rx], vec![interaction(ikind)], vec![g]));
            }
        }
    }
}
