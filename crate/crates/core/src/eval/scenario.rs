//! Scenario files: everything needed to reproduce one evaluation run.

use serde::{Deserialize, Serialize};

use crate::baseline::NnParams;
use crate::change::DetectorConfig;
use crate::descriptor::LibraryConfig;
use crate::error::{invalid, Result};
use crate::simulator::{ChangeSpec, NoiseModel, SceneConfig, TrajectoryConfig, VisibilityConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub library: LibraryConfig,
    #[serde(default)]
    pub scene: SceneConfig,
    #[serde(default)]
    pub changes: ChangeSpec,
    #[serde(default)]
    pub trajectories: TrajectoryConfig,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub visibility: VisibilityConfig,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default)]
    pub baseline: NnParams,
}

impl Default for Scenario {
    fn default() -> Self {
        Self::table_one()
    }
}

impl Scenario {
    /// Eight tables with 35 to 40 objects, twelve changed objects and three
    /// tables revisited from the far side.
    pub fn table_one() -> Self {
        Self {
            name: "paper_table1".into(),
            seed: Some(0),
            library: LibraryConfig::default(),
            scene: SceneConfig {
                objects_per_table: [4, 5],
                total_objects: Some([35, 40]),
                ..SceneConfig::default()
            },
            changes: ChangeSpec::twelve_changes(),
            trajectories: TrajectoryConfig::default(),
            noise: NoiseModel::default(),
            visibility: VisibilityConfig::default(),
            detector: DetectorConfig::default(),
            baseline: NnParams::default(),
        }
    }

    /// Three unchanged tables, each revisited only from the far side.
    pub fn low_overlap() -> Self {
        Self {
            name: "low_overlap".into(),
            seed: Some(0),
            library: LibraryConfig::default(),
            scene: SceneConfig {
                n_tables: 3,
                objects_per_table: [4, 5],
                ..SceneConfig::default()
            },
            changes: ChangeSpec::default(),
            trajectories: TrajectoryConfig {
                opposite_tables: vec![0, 1, 2],
                ..TrajectoryConfig::default()
            },
            noise: NoiseModel::default(),
            visibility: VisibilityConfig::default(),
            detector: DetectorConfig::default(),
            baseline: NnParams::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text).map_err(|e| invalid(format!("scenario JSON: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.trajectories.validate(self.scene.n_tables)?;
        self.noise.validate()?;
        self.visibility.validate()?;
        self.detector.validate()?;
        self.baseline.validate()?;
        if self.library.n_shapes < self.scene.objects_per_table[1] {
            return Err(invalid("library has fewer shapes than a table holds"));
        }
        for (i, c) in self.changes.changes.iter().enumerate() {
            if c.table >= self.scene.n_tables || c.to_table.is_some_and(|t| t >= self.scene.n_tables) {
                return Err(invalid(format!("change {i} refers to a missing table")));
            }
        }
        Ok(())
    }
}

/// Seed precedence: explicit override, then the scenario file, then the
/// environment default, then zero.
pub fn resolve_seed(cli: Option<u64>, scenario: Option<u64>, env: Option<u64>) -> u64 {
    cli.or(scenario).or(env).unwrap_or(0)
}
