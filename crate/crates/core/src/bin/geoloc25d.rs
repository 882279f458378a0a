fn main() {
    std::process::exit(geoloc25d::cli::main_with_args(std::env::args_os()));
}
