fn main() {
    std::process::exit(npmesh_tools::run(std::env::args_os()));
}
