//! Shared fixture: the default synthetic corpus with a desk-trained ELSA,
//! TopK SAE and concept map, written through the CLI commands.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use knobs::commands::{self, MapConfig, SynthConfig, TrainCfaeConfig, TrainSaeConfig};
use knobs::config::{parse_args, resolve};
use knobs::snapshot::{Snapshot, SnapshotPaths};

pub struct Fixture {
    _dir: tempfile::TempDir,
    pub root: PathBuf,
}

impl Fixture {
    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus")
    }
    pub fn cfae(&self) -> PathBuf {
        self.root.join("cfae").join(commands::CFAE_FILE)
    }
    pub fn sae(&self) -> PathBuf {
        self.root.join("sae").join(commands::SAE_FILE)
    }
    pub fn map(&self) -> PathBuf {
        self.root.join("map").join(commands::MAP_FILE)
    }
    pub fn paths(&self) -> SnapshotPaths {
        SnapshotPaths {
            cfae: self.cfae(),
            sae: self.sae(),
            map: self.map(),
            corpus: Some(self.corpus()),
        }
    }
    pub fn snapshot(&self) -> Snapshot {
        Snapshot::load(&self.paths()).unwrap()
    }
}

pub fn config<T: serde::de::DeserializeOwned>(cmd: &str, flags: &[(&str, &Path)]) -> T {
    let mut argv = vec![cmd.to_owned()];
    for (k, v) in flags {
        argv.push(format!("--{k}"));
        argv.push(v.display().to_string());
    }
    resolve(&parse_args(&argv).unwrap()).unwrap()
}

pub fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_owned();
        let f = Fixture { _dir: dir, root };
        let synth: SynthConfig = config("synth", &[("out", &f.corpus())]);
        commands::synth(&synth).unwrap();
        let cfae: TrainCfaeConfig = config("train-cfae", &[("corpus", &f.corpus()), ("out", &f.root.join("cfae"))]);
        commands::train_cfae(&cfae).unwrap();
        let sae: TrainSaeConfig = config(
            "train-sae",
            &[("corpus", &f.corpus()), ("cfae", &f.cfae()), ("out", &f.root.join("sae"))],
        );
        commands::train_sae(&sae).unwrap();
        let map: MapConfig = config(
            "map",
            &[
                ("corpus", &f.corpus()),
                ("cfae", &f.cfae()),
                ("sae", &f.sae()),
                ("out", &f.root.join("map")),
            ],
        );
        commands::map(&map).unwrap();
        f
    })
}
