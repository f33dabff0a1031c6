use std::process::Command;

fn main() {
    println!("cargo:rerun-if-changed=../../.git/HEAD");
    println!("cargo:rerun-if-changed=../../.git/index");
    let describe = Command::new("git")
        .args(["describe", "--tags", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok());
    if let Some(d) = describe {
        let d = d.trim();
        if !d.is_empty() {
            println!("cargo:rustc-env=SPUN_GIT_DESCRIBE=v{}-{d}", env!("CARGO_PKG_VERSION"));
        }
    }
}
