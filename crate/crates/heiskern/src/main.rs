fn main() {
    std::process::exit(heiskern::cli::main_with(std::env::args_os()));
}
