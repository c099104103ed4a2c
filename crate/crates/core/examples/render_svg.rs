//! Renders a probed map and an accuracy-curve figure to SVG files.
//!
//! cargo run --release --example render_svg [OUT_DIR]

use dbprobe::backend::baseline::BaselineBackend;
use dbprobe::baselines::BaselineSpec;
use dbprobe::experiment::render::{render_curves_svg, render_map_svg, CurveSeries, MapStyle};
use dbprobe::metrics::accuracy_curve;
use dbprobe::probe::probe_examples;
use dbprobe::promptfmt::PromptConfig;
use dbprobe::taskgen::{generate, split_balanced, CoordSpace, TaskSpec};

fn main() -> dbprobe::Result<()> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/example-svg".into()));
    std::fs::create_dir_all(&out)?;

    let task = split_balanced(&generate(&TaskSpec::moon(200, 0.1, 5))?, 64, 40, 5)?;
    let backend = BaselineBackend::new(BaselineSpec::svm_rbf());
    let map = probe_examples(&backend, &task.context_examples(CoordSpace::Raw), &PromptConfig::default(), 40)?;
    let style = MapStyle {
        title: Some("svm-rbf on moons".into()),
        ..MapStyle::default()
    };
    std::fs::write(out.join("map.svg"), render_map_svg(&map, &style))?;

    let series = vec![
        CurveSeries {
            name: "rising".into(),
            points: accuracy_curve(&[(8, 0.6), (8, 0.66), (16, 0.75), (16, 0.79), (32, 0.9), (32, 0.88)]),
        },
        CurveSeries {
            name: "flat".into(),
            points: accuracy_curve(&[(8, 0.7), (8, 0.72), (16, 0.71), (16, 0.7), (32, 0.72), (32, 0.73)]),
        },
    ];
    std::fs::write(out.join("curves.svg"), render_curves_svg(&series, "example curves"))?;
    println!("wrote {} and {}", out.join("map.svg").display(), out.join("curves.svg").display());
    Ok(())
}
