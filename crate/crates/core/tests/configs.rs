use std::path::PathBuf;

use streamgrid::config::PRESETS;
use streamgrid::PipelineConfig;

#[test]
fn shipped_configs_match_presets() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in PRESETS {
        let file = PipelineConfig::load(dir.join(format!("{name}.cfg"))).unwrap();
        assert_eq!(file, PipelineConfig::preset(name).unwrap(), "{name}");
        file.validate().unwrap();
    }
}
