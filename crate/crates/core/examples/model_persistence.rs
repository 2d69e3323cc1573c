//! Saves a shape model, reloads it and confirms the copy is identical.

use samforge::model_io::{read_model, write_model, SavedModel};
use samforge::phantom::{generate, PhantomSpec};
use samforge::shape::{build_shape_model, ModelOptions};
use samforge::Sex;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ph = generate(&PhantomSpec {
        n_scans: 120,
        sex: Some(Sex::F),
        modes: vec![],
        ..Default::default()
    })?;
    let model = build_shape_model(&ph.shape_samples(Sex::F), Sex::F, &ModelOptions::default())?;
    let path = std::env::temp_dir().join("samforge_shape_example.samm");
    let saved = SavedModel::from(model);
    write_model(&saved, &path)?;
    let size = std::fs::metadata(&path)?.len();
    let back = read_model(&path)?;
    println!("{} ({size} bytes): identical after reload = {}", path.display(), back == saved);
    Ok(())
}
