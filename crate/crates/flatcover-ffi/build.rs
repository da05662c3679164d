#[cfg(feature = "header")]
fn main() {
    let dir = std::env::var("CARGO_MANIFEST_DIR").unwrap();
    let config = cbindgen::Config::from_file(format!("{dir}/cbindgen.toml")).unwrap();
    cbindgen::generate_with_config(&dir, config)
        .expect("unable to generate bindings")
        .write_to_file(format!("{dir}/include/flatcover.h"));
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
}

#[cfg(not(feature = "header"))]
fn main() {}
