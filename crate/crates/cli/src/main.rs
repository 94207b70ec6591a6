fn main() {
    std::process::exit(lwspiral::run(std::env::args_os()));
}
