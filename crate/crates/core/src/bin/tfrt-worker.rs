fn main() {
    std::process::exit(tfrt::executor::worker::main_with_builtins());
}
