import { bootFromDocument } from "./main.js";

bootFromDocument();
